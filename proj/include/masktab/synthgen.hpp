#pragma once

// Synthetic analogue of a multi-site oat survey: sites on an Ireland-like
// bounding box, daily weather lags before harvest, agronomic covariates, and
// 24 hurdle-distributed contaminant responses driven by planted effects.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/csv.hpp"
#include "masktab/error.hpp"
#include "masktab/preprocess.hpp"
#include "masktab/raw_table.hpp"
#include "masktab/rng.hpp"

namespace masktab {

struct PlantedEffect {
  std::string variable;
  std::size_t response = 0;
  double size = 0.0;
};

/// Reference response panel: name, share of samples tested (out of 773),
/// and share of tested samples above the limit of quantification.
struct ResponseProfile {
  const char* name;
  int tested;
  double occurrence;
};

inline constexpr int kReferenceSamples = 773;

inline constexpr std::array<ResponseProfile, 24> kReferencePanel{{
    {"deoxynivalenol", 693, 0.092},
    {"deoxynivalenol_3_glucoside", 501, 0.048},
    {"nivalenol", 597, 0.395},
    {"acetyl_deoxynivalenol_3", 390, 0.033},
    {"acetyl_deoxynivalenol_15", 390, 0.059},
    {"t2_toxin", 581, 0.515},
    {"ht2_toxin", 548, 0.538},
    {"t2_toxin_3_glucoside", 342, 0.137},
    {"neosolaniol", 318, 0.060},
    {"questiomycin_a", 318, 0.730},
    {"alternariol_methyl_ether", 501, 0.148},
    {"ergocristine", 208, 0.019},
    {"enniatin_a", 549, 0.271},
    {"enniatin_a1", 548, 0.522},
    {"enniatin_b", 549, 0.770},
    {"enniatin_b1", 549, 0.718},
    {"beauvericin", 390, 0.592},
    {"zearalenone", 390, 0.044},
    {"apicidin", 318, 0.101},
    {"sterigmatocystin", 319, 0.251},
    {"diacetoxyscirpenol", 342, 0.202},
    {"alternariol", 342, 0.263},
    {"moniliformin", 597, 0.260},
    {"ergotamine", 208, 0.005},
}};

/// Ordered by decreasing default effect size.
inline const std::vector<std::pair<std::string, double>>& default_effect_sizes() {
  static const std::vector<std::pair<std::string, double>> sizes{
      {"humidity_history", 1.0},  {"precipitation_history", 0.8}, {"temperature_history", 0.6},
      {"seed_moisture", 0.5},     {"rotation", 0.35},             {"sowing_ideotype", 0.3},
      {"variety", 0.25},
  };
  return sizes;
}

struct SynthConfig {
  std::size_t n_samples = 300;
  std::size_t n_sites = 100;
  std::size_t n_responses = 24;
  std::size_t weather_lag_days = 90;
  std::vector<double> missingness_profile;  // empty = reference panel profile
  std::vector<PlantedEffect> planted_effects;
  bool use_default_effects = true;          // used when planted_effects is empty
  std::uint64_t seed = 20240501;

  std::vector<int> years{2022, 2023};
  double noise_sd = 0.35;
  double interaction_strength = 0.2;
  double min_prevalence = 0.4;
  double max_prevalence = 0.8;
  double concentration_scale = 1.5;  // slope of log(x+1) above the hurdle
  double predictor_missing_rate = 0.05;
  double missingness_tolerance = 0.03;

  std::vector<double> resolved_missingness() const {
    if (!missingness_profile.empty()) return missingness_profile;
    std::vector<double> out(n_responses, 0.0);
    if (n_responses == kReferencePanel.size())
      for (std::size_t k = 0; k < n_responses; ++k)
        out[k] = 1.0 - static_cast<double>(kReferencePanel[k].tested) / kReferenceSamples;
    return out;
  }

  std::vector<PlantedEffect> resolved_effects() const {
    if (!planted_effects.empty() || !use_default_effects) return planted_effects;
    std::vector<PlantedEffect> out;
    for (std::size_t k = 0; k < n_responses; ++k) {
      const double gain = 0.8 + 0.1 * static_cast<double>(k % 5);
      for (const auto& [var, size] : default_effect_sizes()) out.push_back({var, k, size * gain});
    }
    return out;
  }

  std::vector<std::string> response_names() const {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < n_responses; ++k) {
      if (n_responses == kReferencePanel.size()) {
        out.emplace_back(kReferencePanel[k].name);
      } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "response_%02zu", k);
        out.emplace_back(buf);
      }
    }
    return out;
  }

  std::vector<double> prevalence() const {
    std::vector<double> out(n_responses, 0.5);
    if (n_responses == kReferencePanel.size())
      for (std::size_t k = 0; k < n_responses; ++k)
        out[k] = std::clamp(kReferencePanel[k].occurrence, min_prevalence, max_prevalence);
    return out;
  }
};

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  nlohmann::json effects = nlohmann::json::array();
  for (const auto& e : c.planted_effects)
    effects.push_back({{"variable", e.variable}, {"response", e.response}, {"size", e.size}});
  return {{"n_samples", c.n_samples},
          {"n_sites", c.n_sites},
          {"n_responses", c.n_responses},
          {"weather_lag_days", c.weather_lag_days},
          {"missingness_profile", c.missingness_profile},
          {"planted_effects", effects},
          {"use_default_effects", c.use_default_effects},
          {"seed", c.seed},
          {"years", c.years},
          {"noise_sd", c.noise_sd},
          {"interaction_strength", c.interaction_strength},
          {"min_prevalence", c.min_prevalence},
          {"max_prevalence", c.max_prevalence},
          {"concentration_scale", c.concentration_scale},
          {"predictor_missing_rate", c.predictor_missing_rate},
          {"missingness_tolerance", c.missingness_tolerance}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    get("n_samples", c.n_samples);
    get("n_sites", c.n_sites);
    get("n_responses", c.n_responses);
    get("weather_lag_days", c.weather_lag_days);
    get("missingness_profile", c.missingness_profile);
    get("use_default_effects", c.use_default_effects);
    get("seed", c.seed);
    get("years", c.years);
    get("noise_sd", c.noise_sd);
    get("interaction_strength", c.interaction_strength);
    get("min_prevalence", c.min_prevalence);
    get("max_prevalence", c.max_prevalence);
    get("concentration_scale", c.concentration_scale);
    get("predictor_missing_rate", c.predictor_missing_rate);
    get("missingness_tolerance", c.missingness_tolerance);
    if (j.contains("planted_effects"))
      for (const auto& e : j.at("planted_effects"))
        c.planted_effects.push_back({e.at("variable").get<std::string>(),
                                     e.at("response").get<std::size_t>(),
                                     e.at("size").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  return c;
}

namespace synth_detail {

inline const std::vector<std::string>& counties() {
  static const std::vector<std::string> v{"Louth",    "Meath",  "Dublin",   "Kildare",
                                          "Wicklow",  "Carlow", "Kilkenny", "Wexford",
                                          "Waterford", "Cork",  "Laois",    "Tipperary"};
  return v;
}

inline const std::vector<std::string>& varieties() {
  static const std::vector<std::string> v{"Husky",  "Isabel", "Lion",   "Canyon",
                                          "Mascani", "Keely", "Gerald", "Barra"};
  return v;
}

inline const std::vector<std::string>& rotations() {
  static const std::vector<std::string> v{"cereal", "grass", "oilseed", "potato", "legume"};
  return v;
}

inline const std::vector<std::string>& soil_types() {
  static const std::vector<std::string> v{"loam", "clay_loam", "sandy_loam", "silt_loam", "peat"};
  return v;
}

inline std::string lag_name(const std::string& var, std::size_t lag) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_lag_%02zu", var.c_str(), lag);
  return buf;
}

inline std::vector<double> zscore(std::vector<double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  for (double& x : v) x = sd > 0.0 ? (x - mean) / sd : 0.0;
  return v;
}

inline std::string fmt(double v) { return csv::format_number(v); }

}  // namespace synth_detail

/// Names of the pre-encoding predictor variables the generator produces, as
/// they appear in FeatureSchema::original_variable after preprocessing.
inline std::vector<std::string> synth_variable_names() {
  return {"latitude",        "longitude",        "year",
          "county",          "soil_type",        "soil_ph",
          "phosphorus_index", "potassium_index", "sowing_ideotype",
          "variety",         "rotation",         "establishment_system",
          "cropping_system", "seed_rate",        "seed_moisture",
          "yield",           "total_n_applied",  "growth_regulator_dose",
          "sowing_date",     "fungicide_application_time", "harvest_date",
          "precipitation_history", "temperature_history", "humidity_history"};
}

struct SynthOutput {
  RawTable raw;
  Matrix latent;  // N x K contamination scores before the hurdle
};

/// Generates the raw (pre-encoding) table. A pure function of the config.
inline SynthOutput generate_with_latent(const SynthConfig& cfg) {
  using namespace synth_detail;
  if (cfg.n_samples < 3 || cfg.n_sites < 1 || cfg.n_responses < 1 || cfg.weather_lag_days < 1 ||
      cfg.years.empty())
    throw ConfigError("synth config: counts must be positive");
  const auto missing = cfg.resolved_missingness();
  if (missing.size() != cfg.n_responses)
    throw ConfigError("synth config: missingness_profile needs one entry per response");
  for (double f : missing)
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("synth config: missing fractions must be in [0,1)");
  const auto effects = cfg.resolved_effects();
  const auto variables = synth_variable_names();
  for (const auto& e : effects) {
    if (std::find(variables.begin(), variables.end(), e.variable) == variables.end())
      throw ConfigError("synth config: planted effect on unknown variable '" + e.variable + "'");
    if (e.response >= cfg.n_responses)
      throw ConfigError("synth config: planted effect response index out of range");
  }

  const std::size_t n = cfg.n_samples, n_lag = cfg.weather_lag_days, k_resp = cfg.n_responses;
  Rng rng(derive_seed(cfg.seed, "synthgen"));

  // Sites.
  struct Site {
    std::string id;
    double lat, lon;
    std::string county, soil;
    double ph_centre;
    bool ph_as_range;
    double phosphorus, potassium;
  };
  std::vector<Site> sites(cfg.n_sites);
  for (std::size_t s = 0; s < cfg.n_sites; ++s) {
    char id[32];
    std::snprintf(id, sizeof id, "L%03zu", s + 1);
    auto& site = sites[s];
    site.id = id;
    site.lat = rng.uniform(51.5, 55.3);
    site.lon = rng.uniform(-10.3, -6.0);
    site.county = counties()[rng.below(counties().size())];
    site.soil = soil_types()[rng.below(soil_types().size())];
    site.ph_centre = rng.uniform(5.6, 7.4);
    site.ph_as_range = rng.bernoulli(0.5);
    site.phosphorus = static_cast<double>(1 + rng.below(4));
    site.potassium = static_cast<double>(1 + rng.below(4));
  }

  // Samples and their site-year blocks.
  std::vector<std::size_t> site_of(n);
  std::vector<int> year_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    site_of[i] = i < cfg.n_sites ? i : static_cast<std::size_t>(rng.below(cfg.n_sites));
    year_of[i] = cfg.years[rng.below(cfg.years.size())];
  }
  std::map<std::pair<std::size_t, int>, std::size_t> block_index;
  std::vector<std::size_t> block_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = block_index.try_emplace({site_of[i], year_of[i]}, block_index.size());
    block_of[i] = it->second;
  }
  const std::size_t n_blocks = block_index.size();

  // Weather per block: seasonal sinusoid + persistent block offset + AR(1).
  struct BlockWeather {
    double harvest_day;
    std::vector<double> precip, temp, dew;
  };
  std::vector<BlockWeather> weather(n_blocks);
  std::vector<std::size_t> block_site(n_blocks);
  for (const auto& [key, b] : block_index) block_site[b] = key.first;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    auto& w = weather[b];
    w.harvest_day = std::clamp(std::round(rng.normal(225.0, 10.0)), 195.0, 255.0);
    const double lat = sites[block_site[b]].lat;
    const double temp_off = rng.normal(0.0, 1.5);
    const double dep_off = rng.normal(0.0, 1.0);
    const double wet_off = rng.normal(0.0, 0.5);
    double ar_t = 0.0, ar_d = 0.0, ar_p = 0.0;
    w.precip.resize(n_lag);
    w.temp.resize(n_lag);
    w.dew.resize(n_lag);
    // Walk forward in time so the AR(1) runs in calendar order.
    for (std::size_t step = 0; step < n_lag; ++step) {
      const std::size_t lag = n_lag - step;  // days before harvest
      const double day = w.harvest_day - static_cast<double>(lag);
      ar_t = 0.7 * ar_t + rng.normal(0.0, 1.0);
      ar_d = 0.6 * ar_d + rng.normal(0.0, 0.8);
      ar_p = 0.5 * ar_p + rng.normal(0.0, 1.0);
      const double seasonal = 13.0 + 5.0 * std::sin(2.0 * std::numbers::pi * (day - 110.0) / 365.0);
      const double t = seasonal - 0.4 * (lat - 53.4) + temp_off + ar_t;
      const double depression = 3.0 + dep_off + ar_d;
      const double wet = -0.3 + wet_off + ar_p;
      w.temp[lag - 1] = t;
      w.dew[lag - 1] = t - depression;
      w.precip[lag - 1] = wet > 0.0 ? 3.0 * std::expm1(wet) : 0.0;
    }
  }

  RawTable raw;
  raw.response_names = cfg.response_names();
  for (std::size_t i = 0; i < n; ++i) {
    raw.location_ids.push_back(sites[site_of[i]].id);
    raw.years.push_back(year_of[i]);
  }

  auto add_column = [&](std::string name, RawColumnType type) -> RawColumn& {
    raw.predictors.push_back({std::move(name), type, {}, 0, std::vector<std::string>(n)});
    return raw.predictors.back();
  };
  auto maybe_missing = [&](std::string value, double rate) {
    return rng.bernoulli(rate) ? std::string(csv::kMissing) : value;
  };
  const double miss = cfg.predictor_missing_rate;

  // Sample-level draws, kept numerically for the planted effects.
  std::vector<double> seed_moisture(n), seed_rate(n), yield(n), total_n(n), sowing(n),
      fungicide(n);
  std::vector<std::string> ideotype(n), variety(n), rotation(n), establishment(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool winter = rng.bernoulli(0.4);
    ideotype[i] = winter ? "Winter" : "Spring";
    variety[i] = varieties()[rng.below(varieties().size())];
    rotation[i] = rotations()[rng.below(rotations().size())];
    establishment[i] = rng.bernoulli(0.7) ? "Plough" : "Min_Till";
    seed_moisture[i] = rng.normal(16.0, 2.0);
    seed_rate[i] = rng.normal(140.0, 20.0);
    yield[i] = rng.normal(6.5, 1.2);
    total_n[i] = rng.normal(90.0, 20.0);
    sowing[i] = std::clamp(std::round(winter ? rng.normal(295.0, 10.0) : rng.normal(85.0, 12.0)),
                           1.0, 365.0);
    fungicide[i] = std::clamp(std::round(rng.normal(150.0, 15.0)), 1.0, 365.0);
  }

  auto fill_text = [&](const std::string& name, RawColumnType type, auto&& cell) {
    auto& col = add_column(name, type);
    for (std::size_t i = 0; i < n; ++i) col.values[i] = cell(i);
  };
  fill_text("latitude", RawColumnType::continuous, [&](std::size_t i) { return fmt(sites[site_of[i]].lat); });
  fill_text("longitude", RawColumnType::continuous, [&](std::size_t i) { return fmt(sites[site_of[i]].lon); });
  fill_text("year", RawColumnType::categorical, [&](std::size_t i) { return std::to_string(year_of[i]); });
  fill_text("county", RawColumnType::categorical, [&](std::size_t i) { return sites[site_of[i]].county; });
  fill_text("soil_type", RawColumnType::categorical, [&](std::size_t i) { return sites[site_of[i]].soil; });
  fill_text("soil_ph", RawColumnType::ph, [&](std::size_t i) {
    const auto& s = sites[site_of[i]];
    std::string text = s.ph_as_range ? fmt(std::round((s.ph_centre - 0.3) * 10) / 10) + "-" +
                                           fmt(std::round((s.ph_centre + 0.3) * 10) / 10)
                                     : fmt(std::round(s.ph_centre * 10) / 10);
    return maybe_missing(text, miss);
  });
  fill_text("phosphorus_index", RawColumnType::continuous, [&](std::size_t i) { return fmt(sites[site_of[i]].phosphorus); });
  fill_text("potassium_index", RawColumnType::continuous, [&](std::size_t i) { return fmt(sites[site_of[i]].potassium); });
  fill_text("sowing_ideotype", RawColumnType::categorical, [&](std::size_t i) { return ideotype[i]; });
  fill_text("variety", RawColumnType::categorical, [&](std::size_t i) { return variety[i]; });
  fill_text("rotation", RawColumnType::categorical, [&](std::size_t i) { return rotation[i]; });
  fill_text("establishment_system", RawColumnType::categorical,
            [&](std::size_t i) { return maybe_missing(establishment[i], miss); });
  fill_text("cropping_system", RawColumnType::categorical, [&](std::size_t) { return std::string("Conventional"); });
  fill_text("seed_rate", RawColumnType::continuous, [&](std::size_t i) { return maybe_missing(fmt(seed_rate[i]), miss); });
  fill_text("seed_moisture", RawColumnType::continuous, [&](std::size_t i) { return fmt(seed_moisture[i]); });
  fill_text("yield", RawColumnType::continuous, [&](std::size_t i) { return maybe_missing(fmt(yield[i]), miss); });
  fill_text("total_n_applied", RawColumnType::continuous, [&](std::size_t i) { return maybe_missing(fmt(total_n[i]), miss); });
  fill_text("growth_regulator_dose", RawColumnType::continuous,
            [&](std::size_t) { return maybe_missing(fmt(std::round(rng.uniform(0.5, 1.5) * 100) / 100), 0.99); });
  fill_text("sowing_date", RawColumnType::day_of_year, [&](std::size_t i) { return fmt(sowing[i]); });
  fill_text("fungicide_application_time", RawColumnType::day_of_year,
            [&](std::size_t i) { return maybe_missing(fmt(fungicide[i]), miss); });
  fill_text("harvest_date", RawColumnType::day_of_year,
            [&](std::size_t i) { return fmt(weather[block_of[i]].harvest_day); });

  const std::array<std::pair<const char*, int>, 3> series{{{"precipitation", 0}, {"temperature", 1}, {"dewpoint", 2}}};
  for (const auto& [var, which] : series) {
    for (std::size_t lag = 1; lag <= n_lag; ++lag) {
      auto& col = add_column(lag_name(var, lag), RawColumnType::weather_lag);
      col.weather_variable = var;
      col.lag = static_cast<int>(lag);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& w = weather[block_of[i]];
        const auto& v = which == 0 ? w.precip : which == 1 ? w.temp : w.dew;
        col.values[i] = fmt(v[lag - 1]);
      }
    }
  }

  // Standardised covariate per planted variable.
  std::map<std::string, std::vector<double>> covariate;
  auto history_mean = [&](const std::string& var) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& w = weather[block_of[i]];
      double acc = 0.0;
      for (std::size_t l = 0; l < n_lag; ++l) {
        if (var == "precipitation") acc += w.precip[l];
        else if (var == "temperature") acc += w.temp[l];
        else acc += relative_humidity(w.temp[l], w.dew[l]).percent;
      }
      out[i] = acc / static_cast<double>(n_lag);
    }
    return zscore(std::move(out));
  };
  auto categorical_codes = [&](const std::string& name) {
    const auto& col = raw.column(name);
    std::set<std::string> level_set;
    for (const auto& v : col.values)
      if (!csv::is_missing(v)) level_set.insert(v);
    std::vector<std::string> levels(level_set.begin(), level_set.end());
    Rng code_rng(derive_seed(cfg.seed, "levels:" + name));
    code_rng.shuffle(levels);
    std::map<std::string, double> code;
    for (std::size_t l = 0; l < levels.size(); ++l)
      code[levels[l]] = levels.size() == 1 ? 0.0
                                           : -1.0 + 2.0 * static_cast<double>(l) /
                                                        static_cast<double>(levels.size() - 1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto it = code.find(col.values[i]);
      out[i] = it == code.end() ? 0.0 : it->second;
    }
    return zscore(std::move(out));
  };
  for (const auto& e : effects) {
    if (covariate.count(e.variable)) continue;
    std::vector<double> cov;
    if (e.variable == "humidity_history") cov = history_mean("humidity");
    else if (e.variable == "temperature_history") cov = history_mean("temperature");
    else if (e.variable == "precipitation_history") cov = history_mean("precipitation");
    else {
      const auto& col = raw.column(e.variable);
      if (col.type == RawColumnType::categorical) {
        cov = categorical_codes(e.variable);
      } else {
        cov.resize(n);
        std::vector<double> numeric(n);
        double fill = 0.0;
        std::size_t seen = 0;
        for (std::size_t i = 0; i < n; ++i) {
          numeric[i] = col.type == RawColumnType::ph ? parse_ph(col.values[i])
                                                     : csv::parse_number(col.values[i]);
          if (!std::isnan(numeric[i])) {
            fill += numeric[i];
            ++seen;
          }
        }
        fill = seen ? fill / static_cast<double>(seen) : 0.0;
        for (double& v : numeric)
          if (std::isnan(v)) v = fill;
        cov = zscore(std::move(numeric));
      }
    }
    covariate[e.variable] = std::move(cov);
  }

  // Latent scores: linear planted effects, one interaction between the two
  // strongest effects of each response, Gaussian noise.
  SynthOutput output;
  output.latent = Matrix(n, k_resp);
  Rng noise_rng(derive_seed(cfg.seed, "latent_noise"));
  for (std::size_t k = 0; k < k_resp; ++k) {
    std::vector<const PlantedEffect*> mine;
    for (const auto& e : effects)
      if (e.response == k) mine.push_back(&e);
    std::stable_sort(mine.begin(), mine.end(), [](auto* a, auto* b) {
      return std::abs(a->size) > std::abs(b->size);
    });
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (auto* e : mine) z += e->size * covariate[e->variable][i];
      if (mine.size() >= 2)
        z += cfg.interaction_strength * covariate[mine[0]->variable][i] *
             covariate[mine[1]->variable][i];
      output.latent(i, k) = z + cfg.noise_sd * noise_rng.normal();
    }
  }

  // Hurdle: zero below a per-response threshold, exponential above.
  const auto prevalence = cfg.prevalence();
  raw.concentration = Matrix(n, k_resp, 0.0);
  raw.below_loq = Matrix(n, k_resp, 0.0);
  for (std::size_t k = 0; k < k_resp; ++k) {
    std::vector<double> z = output.latent.column(k);
    std::sort(z.begin(), z.end());
    const auto idx = std::min(n - 1, static_cast<std::size_t>(std::floor((1.0 - prevalence[k]) *
                                                                          static_cast<double>(n))));
    const double threshold = idx == 0 ? z[0] - 1.0 : 0.5 * (z[idx - 1] + z[idx]);
    for (std::size_t i = 0; i < n; ++i) {
      const double excess = output.latent(i, k) - threshold;
      if (excess > 0.0) {
        raw.concentration(i, k) = std::expm1(cfg.concentration_scale * excess);
      } else {
        raw.concentration(i, k) = 0.0;
        raw.below_loq(i, k) = 1.0;
      }
    }
  }

  // Campaign-level missingness: whole site-year blocks per response.
  std::vector<std::vector<std::size_t>> block_rows(n_blocks);
  for (std::size_t i = 0; i < n; ++i) block_rows[block_of[i]].push_back(i);
  Rng miss_rng(derive_seed(cfg.seed, "missingness"));
  for (std::size_t k = 0; k < k_resp; ++k) {
    const auto target = static_cast<std::size_t>(std::llround(missing[k] * static_cast<double>(n)));
    auto order = miss_rng.permutation(n_blocks);
    std::size_t removed = 0;
    for (auto b : order) {
      if (removed + block_rows[b].size() > target) continue;
      for (auto i : block_rows[b]) {
        raw.concentration(i, k) = kSentinel;
        raw.below_loq(i, k) = 0.0;
      }
      removed += block_rows[b].size();
    }
    const double realised = static_cast<double>(removed) / static_cast<double>(n);
    if (std::abs(realised - missing[k]) > cfg.missingness_tolerance)
      throw ConfigError("synthgen: missing fraction " + csv::format_number(missing[k]) +
                        " for response '" + raw.response_names[k] +
                        "' is unreachable with whole site-year blocks (best " +
                        csv::format_number(realised) + ")");
  }

  output.raw = std::move(raw);
  return output;
}

inline RawTable generate(const SynthConfig& cfg) { return generate_with_latent(cfg).raw; }

struct OracleRanking {
  std::size_t response = 0;
  std::vector<std::string> ranked;     // planted variables, decreasing |effect|
  std::vector<std::string> tied_last;  // everything else, all tied
};

/// Ground-truth importance ordering per response.
inline std::vector<OracleRanking> oracle_importance(const SynthConfig& cfg) {
  const auto effects = cfg.resolved_effects();
  const auto variables = synth_variable_names();
  std::vector<OracleRanking> out(cfg.n_responses);
  for (std::size_t k = 0; k < cfg.n_responses; ++k) {
    out[k].response = k;
    std::map<std::string, double> mag;
    for (const auto& e : effects)
      if (e.response == k && e.size != 0.0) mag[e.variable] += std::abs(e.size);
    std::vector<std::pair<std::string, double>> ranked(mag.begin(), mag.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [v, m] : ranked) out[k].ranked.push_back(v);
    for (const auto& v : variables)
      if (!mag.count(v)) out[k].tied_last.push_back(v);
  }
  return out;
}

/// Planted variables ordered by total |effect| across responses.
inline std::vector<std::string> overall_planted_order(const SynthConfig& cfg) {
  std::map<std::string, double> mag;
  for (const auto& e : cfg.resolved_effects()) mag[e.variable] += std::abs(e.size);
  std::vector<std::pair<std::string, double>> v;
  for (const auto& [name, m] : mag)
    if (m > 0.0) v.emplace_back(name, m);
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (const auto& [name, m] : v) out.push_back(name);
  return out;
}

inline nlohmann::json oracle_to_json(const std::vector<OracleRanking>& oracle,
                                     const std::vector<std::string>& response_names) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& o : oracle)
    out.push_back({{"response", response_names.at(o.response)},
                   {"ranked", o.ranked},
                   {"tied_last", o.tied_last}});
  return out;
}

/// Writes the raw table plus the config echo and the oracle ranking.
inline void write_synthetic(const std::filesystem::path& dir, const SynthConfig& cfg) {
  const auto raw = generate(cfg);
  write_raw_table(dir, raw);
  write_file(dir / "synth_config.json", synth_config_to_json(cfg).dump(2) + "\n");
  write_file(dir / "oracle_importance.json",
             oracle_to_json(oracle_importance(cfg), raw.response_names).dump(2) + "\n");
}

}  // namespace masktab
