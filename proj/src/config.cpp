#include "mrd/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mrd/errors.hpp"

namespace mrd {

namespace {
using json = nlohmann::json;

struct TomlParser {
  const std::string& text;
  std::size_t pos = 0;
  int line_no = 1;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("toml line " + std::to_string(line_no) + ": " + what);
  }

  void skip_inline_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  }

  bool at_end() const { return pos >= text.size(); }

  json parse_value(const std::string& raw) {
    std::string v = raw;
    // trim
    std::size_t b = 0, e = v.size();
    while (b < e && std::isspace(static_cast<unsigned char>(v[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(v[e - 1]))) --e;
    v = v.substr(b, e - b);
    if (v.empty()) fail("empty value");
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"') fail("unterminated string");
      std::string out;
      for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size()) {
          ++i;
          switch (v[i]) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case '"': out.push_back('"'); break;
            case '\\': out.push_back('\\'); break;
            default: fail("unsupported escape");
          }
        } else {
          out.push_back(v[i]);
        }
      }
      return json(out);
    }
    if (v == "true") return json(true);
    if (v == "false") return json(false);
    if (v.front() == '[') {
      if (v.back() != ']') fail("unterminated array");
      json arr = json::array();
      std::string inner = v.substr(1, v.size() - 2);
      std::string item;
      int depth = 0;
      bool in_str = false;
      for (const char c : inner) {
        if (c == '"') in_str = !in_str;
        if (!in_str && c == '[') ++depth;
        if (!in_str && c == ']') --depth;
        if (!in_str && depth == 0 && c == ',') {
          arr.push_back(parse_value(item));
          item.clear();
        } else {
          item.push_back(c);
        }
      }
      std::size_t ib = 0;
      while (ib < item.size() && std::isspace(static_cast<unsigned char>(item[ib]))) ++ib;
      if (ib < item.size()) arr.push_back(parse_value(item));
      return arr;
    }
    // number: integer when it round-trips as one
    {
      std::int64_t iv = 0;
      const char* vb = v.data();
      const char* ve = vb + v.size();
      auto [p, ec] = std::from_chars(vb, ve, iv);
      if (ec == std::errc() && p == ve) return json(iv);
    }
    {
      double dv = 0.0;
      const char* vb = v.data();
      const char* ve = vb + v.size();
      auto [p, ec] = std::from_chars(vb, ve, dv);
      if (ec == std::errc() && p == ve) return json(dv);
    }
    fail("cannot parse value '" + v + "'");
  }

  json parse() {
    json root = json::object();
    json* section = &root;
    std::istringstream stream(text);
    std::string line;
    line_no = 0;
    while (std::getline(stream, line)) {
      ++line_no;
      // strip comments outside strings
      bool in_str = false;
      std::string clean;
      for (const char c : line) {
        if (c == '"') in_str = !in_str;
        if (c == '#' && !in_str) break;
        if (c != '\r') clean.push_back(c);
      }
      std::size_t b = 0, e = clean.size();
      while (b < e && std::isspace(static_cast<unsigned char>(clean[b]))) ++b;
      while (e > b && std::isspace(static_cast<unsigned char>(clean[e - 1]))) --e;
      if (b == e) continue;
      const std::string body = clean.substr(b, e - b);
      if (body.front() == '[') {
        if (body.back() != ']') fail("bad section header");
        const std::string name = body.substr(1, body.size() - 2);
        section = &root;
        std::string part;
        std::istringstream np(name);
        while (std::getline(np, part, '.')) {
          if (part.empty()) fail("empty section name component");
          section = &(*section)[part];
        }
        if (!section->is_object() && !section->is_null()) fail("section redefines a key");
        if (section->is_null()) *section = json::object();
        continue;
      }
      const std::size_t eq = body.find('=');
      if (eq == std::string::npos) fail("expected 'key = value'");
      std::string key = body.substr(0, eq);
      while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back())))
        key.pop_back();
      if (key.empty()) fail("empty key");
      (*section)[key] = parse_value(body.substr(eq + 1));
    }
    return root;
  }
};

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

Eigen::Vector2d get_vec2(const json& j, const std::string& key,
                         const Eigen::Vector2d& fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  const auto arr = j.at(key).get<std::vector<double>>();
  if (arr.size() != 2) throw ConfigError("config field '" + key + "' needs 2 entries");
  return Eigen::Vector2d(arr[0], arr[1]);
}

}  // namespace

json parse_toml(const std::string& text) {
  TomlParser p{text};
  return p.parse();
}

json load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  // JSON configs start with '{'; everything else goes through the TOML path
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (c == '{') {
      try {
        return json::parse(text);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config JSON parse error: ") + e.what());
      }
    }
    break;
  }
  return parse_toml(text);
}

LotConfig lot_config_from_json(const json& root) {
  const json led = root.contains("led") ? root.at("led") : json::object();
  LotConfig cfg;
  cfg.n_items = get_or(led, "n_items", cfg.n_items);
  cfg.m = get_or(led, "m", cfg.m);
  cfg.target = get_vec2(led, "target", cfg.target);
  cfg.spec_halfwidths = get_vec2(led, "spec_halfwidths", cfg.spec_halfwidths);
  cfg.mean_shift = get_or(led, "mean_shift", cfg.mean_shift);
  cfg.lot_mean_spread = get_or(led, "lot_mean_spread", cfg.lot_mean_spread);
  cfg.within_lot_spread = get_or(led, "within_lot_spread", cfg.within_lot_spread);
  cfg.spread_heterogeneity = get_or(led, "spread_heterogeneity", cfg.spread_heterogeneity);
  cfg.conversion_slope = get_vec2(led, "conversion_slope", cfg.conversion_slope);
  cfg.rework_noise_sd = get_or(led, "rework_noise_sd", cfg.rework_noise_sd);
  cfg.dispersion_inflation = get_or(led, "dispersion_inflation", cfg.dispersion_inflation);
  cfg.c_d = get_or(led, "c_d", cfg.c_d);
  cfg.c_y = get_or(led, "c_y", cfg.c_y);
  cfg.validate();
  return cfg;
}

json lot_config_to_json(const LotConfig& cfg) {
  json led;
  led["n_items"] = cfg.n_items;
  led["m"] = cfg.m;
  led["target"] = {cfg.target[0], cfg.target[1]};
  led["spec_halfwidths"] = {cfg.spec_halfwidths[0], cfg.spec_halfwidths[1]};
  led["mean_shift"] = cfg.mean_shift;
  led["lot_mean_spread"] = cfg.lot_mean_spread;
  led["within_lot_spread"] = cfg.within_lot_spread;
  led["spread_heterogeneity"] = cfg.spread_heterogeneity;
  led["conversion_slope"] = {cfg.conversion_slope[0], cfg.conversion_slope[1]};
  led["rework_noise_sd"] = cfg.rework_noise_sd;
  led["dispersion_inflation"] = cfg.dispersion_inflation;
  led["c_d"] = cfg.c_d;
  led["c_y"] = cfg.c_y;
  return led;
}

ExperimentConfig experiment_from_json(const json& root) {
  const json mc = root.contains("mc") ? root.at("mc") : json::object();
  ExperimentConfig cfg;
  cfg.master_seed = get_or<std::uint64_t>(mc, "seed", cfg.master_seed);
  cfg.repetitions = get_or(mc, "repetitions", cfg.repetitions);
  cfg.n_lots = get_or<std::int64_t>(mc, "n_lots", cfg.n_lots);
  cfg.policy = policy_from_name(get_or<std::string>(mc, "policy", policy_name(cfg.policy)));
  cfg.lot = lot_config_from_json(root);
  cfg.kernel = kernel_from_name(get_or<std::string>(mc, "kernel", kernel_name(cfg.kernel)));
  if (mc.contains("bandwidth")) {
    const json& bw = mc.at("bandwidth");
    if (bw.is_number()) {
      cfg.bandwidth = BandwidthSpec::fixed(bw.get<double>());
    } else if (bw.is_string() && bw.get<std::string>() == "mse") {
      cfg.bandwidth = BandwidthSpec::mse_optimal();
    } else {
      throw ConfigError("mc.bandwidth must be a number or \"mse\"");
    }
  }
  cfg.axes = get_or(mc, "axes", cfg.axes);
  cfg.omega_distance = get_or(mc, "omega_distance", cfg.omega_distance);
  cfg.omega_yield = get_or(mc, "omega_yield", cfg.omega_yield);

  if (mc.contains("cells")) {
    // explicit grid, as emitted by the config echo
    for (const auto& c : mc.at("cells")) {
      EstimatorCell cell;
      const std::string design = c.at("design").get<std::string>();
      if (design != "sharp" && design != "fuzzy")
        throw ConfigError("mc.cells design must be sharp|fuzzy");
      cell.fuzzy = design == "fuzzy";
      cell.subset = c.value("subset", false);
      cell.learner = LearnerSpec::of(learner_from_name(c.at("learner").get<std::string>()));
      cfg.cells.push_back(cell);
    }
    return cfg;
  }

  const std::vector<std::string> learners =
      get_or<std::vector<std::string>>(mc, "learners",
                                       {"none", "linear", "lasso", "global-lasso",
                                        "boosting", "stacking"});
  std::vector<std::string> designs =
      get_or<std::vector<std::string>>(mc, "designs", {"sharp", "fuzzy"});
  std::vector<bool> subsets;
  if (mc.contains("subset")) {
    for (const auto& v : mc.at("subset")) subsets.push_back(v.get<bool>());
  } else {
    subsets = {false, true};
  }
  for (const std::string& design : designs) {
    if (design != "sharp" && design != "fuzzy")
      throw ConfigError("mc.designs entries must be sharp|fuzzy");
    for (const bool subset : subsets) {
      for (const std::string& learner : learners) {
        EstimatorCell cell;
        cell.fuzzy = design == "fuzzy";
        cell.subset = subset;
        cell.learner = LearnerSpec::of(learner_from_name(learner));
        cfg.cells.push_back(cell);
      }
    }
  }
  return cfg;
}

json experiment_to_json(const ExperimentConfig& cfg) {
  json root;
  root["led"] = lot_config_to_json(cfg.lot);
  json mc;
  mc["seed"] = cfg.master_seed;
  mc["repetitions"] = cfg.repetitions;
  mc["n_lots"] = cfg.n_lots;
  mc["policy"] = policy_name(cfg.policy);
  mc["kernel"] = kernel_name(cfg.kernel);
  if (cfg.bandwidth.mode == BandwidthSpec::Mode::Fixed)
    mc["bandwidth"] = cfg.bandwidth.h;
  else
    mc["bandwidth"] = "mse";
  mc["axes"] = cfg.axes;
  mc["omega_distance"] = cfg.omega_distance;
  mc["omega_yield"] = cfg.omega_yield;
  // the cell grid is echoed explicitly so a rerun rebuilds it identically
  json cells = json::array();
  for (const EstimatorCell& c : cfg.cells) {
    json cell;
    cell["design"] = c.fuzzy ? "fuzzy" : "sharp";
    cell["subset"] = c.subset;
    cell["learner"] = learner_name(c.learner.kind);
    cells.push_back(std::move(cell));
  }
  mc["cells"] = std::move(cells);
  root["mc"] = mc;
  return root;
}

}  // namespace mrd
