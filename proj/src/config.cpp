#include "levymal/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "levymal/errors.hpp"

namespace levymal {

namespace {

using json = nlohmann::json;

struct LineIndex {
  const std::string& text;

  std::pair<std::size_t, std::size_t> at(std::size_t offset) const {
    offset = std::min(offset, text.size());
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < offset; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    return {line, col};
  }

  // Line of the key path, found by searching the quoted keys in order.
  std::size_t line_of(const std::vector<std::string>& keys) const {
    std::size_t pos = 0;
    for (const auto& k : keys) {
      if (k.empty() || std::isdigit(static_cast<unsigned char>(k.front()))) continue;
      const auto hit = text.find("\"" + k + "\"", pos);
      if (hit == std::string::npos) break;
      pos = hit;
    }
    return at(pos).first;
  }
};

class Reader {
 public:
  Reader(const std::string& text, std::string source) : lines_{text}, source_(std::move(source)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& what) const {
    std::string dotted;
    for (const auto& k : path) dotted += (dotted.empty() ? "" : ".") + k;
    throw ConfigError(source_ + ":" + std::to_string(lines_.line_of(path)) + ": " +
                      (dotted.empty() ? "" : "'" + dotted + "': ") + what);
  }

  void only_keys(const json& obj, const std::vector<std::string>& path,
                 const std::set<std::string>& allowed) const {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
      if (!allowed.count(key)) {
        auto p = path;
        p.push_back(key);
        fail(p, "unknown key '" + key + "'");
      }
    }
  }

  const json& need(const json& obj, std::vector<std::string> path, const std::string& key) const {
    if (!obj.contains(key)) fail(path, "missing required key '" + key + "'");
    return obj.at(key);
  }

  double number(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }

  double positive(const json& v, const std::vector<std::string>& path) const {
    const double x = number(v, path);
    if (!(x > 0.0)) fail(path, "must be strictly positive");
    return x;
  }

  std::uint64_t integer(const json& v, const std::vector<std::string>& path, std::uint64_t min) const {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(path, "expected a non-negative integer");
    }
    const auto x = v.get<std::uint64_t>();
    if (x < min) fail(path, "must be at least " + std::to_string(min));
    return x;
  }

  std::vector<double> numbers(const json& v, const std::vector<std::string>& path) const {
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) fail(path, "expected a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto p = path;
      p.push_back(std::to_string(i));
      out.push_back(number(v[i], p));
    }
    return out;
  }

  std::string string(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

  // Fills `model`; with `partial` only the present keys are read.
  void model(const json& obj, std::vector<std::string> path, ModelConfig& m, bool partial) const {
    only_keys(obj, path, {"gamma", "sigma", "horizon", "jumps"});
    auto field = [&](const char* key) -> const json* {
      if (obj.contains(key)) return &obj.at(key);
      if (!partial) fail(path, std::string("missing required key '") + key + "'");
      return nullptr;
    };
    auto sub = [&](const std::string& k) {
      auto p = path;
      p.push_back(k);
      return p;
    };
    if (auto* v = field("gamma")) m.gamma = number(*v, sub("gamma"));
    if (auto* v = field("sigma")) {
      m.sigma = number(*v, sub("sigma"));
      if (m.sigma < 0.0) fail(sub("sigma"), "must be >= 0");
    }
    if (auto* v = field("horizon")) m.horizon = positive(*v, sub("horizon"));
    if (auto* v = field("jumps")) {
      if (!v->is_array()) fail(sub("jumps"), "expected an array");
      m.jumps.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        auto p = sub("jumps");
        p.push_back(std::to_string(i));
        const json& c = (*v)[i];
        only_keys(c, p, {"intensity", "sizes", "probabilities"});
        JumpComponent comp;
        comp.intensity = positive(need(c, p, "intensity"), p);
        comp.sizes = numbers(need(c, p, "sizes"), p);
        comp.probabilities = numbers(need(c, p, "probabilities"), p);
        if (comp.sizes.size() != comp.probabilities.size() || comp.sizes.empty()) {
          fail(p, "sizes and probabilities must be non-empty and of equal length");
        }
        m.jumps.push_back(std::move(comp));
      }
    }
  }

  void scheme(const json& obj, std::vector<std::string> path, SchemeConfig& s, bool partial) const {
    only_keys(obj, path, {"steps", "paths", "seed", "basis", "picard_tol"});
    auto field = [&](const char* key) -> const json* {
      if (obj.contains(key)) return &obj.at(key);
      if (!partial) fail(path, std::string("missing required key '") + key + "'");
      return nullptr;
    };
    auto sub = [&](const std::string& k) {
      auto p = path;
      p.push_back(k);
      return p;
    };
    if (auto* v = field("steps")) s.steps = integer(*v, sub("steps"), 1);
    if (auto* v = field("paths")) s.paths = integer(*v, sub("paths"), 1);
    if (auto* v = field("seed")) s.seed = integer(*v, sub("seed"), 0);
    if (auto* v = field("picard_tol")) s.picard_tol = positive(*v, sub("picard_tol"));
    if (auto* v = field("basis")) {
      const auto p = sub("basis");
      only_keys(*v, p, {"kind", "degree"});
      const std::string kind = string(need(*v, p, "kind"), p);
      if (kind == "indicator") {
        if (v->contains("degree")) fail(p, "the indicator basis takes no degree");
        s.basis = BasisSpec::indicator();
      } else if (kind == "polynomial") {
        s.basis = BasisSpec::polynomial(static_cast<int>(integer(need(*v, p, "degree"), p, 0)));
      } else {
        fail(p, "basis kind must be 'polynomial' or 'indicator'");
      }
    }
  }

  ExperimentSpec experiment(const json& obj, std::vector<std::string> path, const ExperimentConfig& cfg) const {
    only_keys(obj, path, {"name", "recipe", "model", "scheme", "params", "tolerances"});
    ExperimentSpec e;
    e.name = string(need(obj, path, "name"), path);
    if (e.name.empty() || !std::all_of(e.name.begin(), e.name.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
        })) {
      fail(path, "experiment name must be non-empty and use only letters, digits, '_' and '-'");
    }
    path.push_back(e.name);
    e.recipe = string(need(obj, path, "recipe"), path);
    const RecipeInfo* info = nullptr;
    for (const auto& r : recipes()) {
      if (r.name == e.recipe) info = &r;
    }
    if (!info) fail(path, "unknown recipe '" + e.recipe + "'");
    e.model = cfg.model;
    e.scheme = cfg.scheme;
    auto sub = [&](const std::string& k) {
      auto p = path;
      p.push_back(k);
      return p;
    };
    if (obj.contains("model")) model(obj.at("model"), sub("model"), e.model, true);
    if (obj.contains("scheme")) scheme(obj.at("scheme"), sub("scheme"), e.scheme, true);

    std::set<std::string> param_keys, tol_keys;
    for (const auto& d : info->params) param_keys.insert(d.key);
    for (const auto& d : info->tolerances) tol_keys.insert(d.key);
    if (obj.contains("params")) {
      only_keys(obj.at("params"), sub("params"), param_keys);
      for (const auto& [key, value] : obj.at("params").items()) {
        auto p = sub("params");
        p.push_back(key);
        const auto doc = std::find_if(info->params.begin(), info->params.end(), [&](const ParamDoc& d) { return d.key == key; });
        if (!doc->list && !value.is_number()) fail(p, "expected a number");
        e.params[key] = numbers(value, p);
      }
    }
    if (!tol_keys.empty() || obj.contains("tolerances")) {
      const json& tols = need(obj, path, "tolerances");
      only_keys(tols, sub("tolerances"), tol_keys);
      for (const auto& key : tol_keys) {
        const json& v = need(tols, sub("tolerances"), key);
        auto p = sub("tolerances");
        p.push_back(key);
        e.tolerances[key] = positive(v, p);
      }
    }
    return e;
  }

 private:
  LineIndex lines_;
  std::string source_;
};

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = LineIndex{text}.at(e.byte == 0 ? 0 : e.byte - 1);
    std::string what = e.what();
    if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }

  const Reader rd(text, source);
  rd.only_keys(doc, {}, {"model", "scheme", "experiments", "output"});
  ExperimentConfig cfg;
  cfg.hash = hex64(fnv1a(text));
  rd.model(rd.need(doc, {}, "model"), {"model"}, cfg.model, false);
  rd.scheme(rd.need(doc, {}, "scheme"), {"scheme"}, cfg.scheme, false);
  cfg.output = rd.string(rd.need(doc, {}, "output"), {"output"});
  const json& list = rd.need(doc, {}, "experiments");
  if (!list.is_array()) rd.fail({"experiments"}, "expected an array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto e = rd.experiment(list[i], {"experiments", std::to_string(i)}, cfg);
    if (!names.insert(e.name).second) rd.fail({"experiments", e.name}, "duplicate experiment name");
    cfg.experiments.push_back(std::move(e));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::vector<ExperimentSpec> select_experiments(const ExperimentConfig& config,
                                               const std::vector<std::string>& names) {
  if (names.empty()) return config.experiments;
  std::vector<ExperimentSpec> out;
  for (const auto& n : names) {
    const auto it = std::find_if(config.experiments.begin(), config.experiments.end(),
                                 [&](const ExperimentSpec& e) { return e.name == n; });
    if (it == config.experiments.end()) throw ConfigError("unknown experiment name '" + n + "'");
    out.push_back(*it);
  }
  return out;
}

std::string config_schema() {
  std::ostringstream out;
  out << R"(Experiment file (JSON). Unknown keys are errors; keys marked * are required.

{
  "model": {                      * Levy triplet on [0, T]
    "gamma": number,              * drift
    "sigma": number >= 0,         * Brownian coefficient
    "horizon": number > 0,        * T
    "jumps": [                    * compound-Poisson components, may be empty
      {"intensity": > 0, "sizes": [numbers], "probabilities": [numbers]}
    ]
  },
  "scheme": {                     *
    "steps": integer >= 1,        *
    "paths": integer >= 1,        *
    "seed": integer >= 0,         * no default
    "basis": {"kind": "polynomial", "degree": integer} | {"kind": "indicator"},  *
    "picard_tol": number > 0      * inner fixed-point and global Picard tolerance
  },
  "output": "directory",          *
  "experiments": [                *
    {
      "name": "letters digits _ -",  * unique; also the CSV file name
      "recipe": "see below",         *
      "model": {...},                optional overrides of the model keys
      "scheme": {...},               optional overrides of the scheme keys
      "params": {...},               optional, recipe-specific
      "tolerances": {...}            every tolerance of the recipe, each > 0
    }
  ]
}

Each experiment draws its paths from a sub-seed of scheme.seed keyed on its name.
Statistical checks pass iff |estimate - target| / SE <= 3.

Recipes:
)";
  for (const auto& r : recipes()) {
    out << "\n  " << r.name << ": " << r.summary << "\n";
    for (const auto& p : r.params) {
      out << "    param " << p.key << (p.list ? " (list)" : "") << " = ";
      for (std::size_t i = 0; i < p.default_value.size(); ++i) out << (i ? ", " : "") << p.default_value[i];
      out << "  " << p.doc << "\n";
    }
    for (const auto& t : r.tolerances) out << "    tolerance " << t.key << " *  " << t.doc << "\n";
  }
  return out.str();
}

}  // namespace levymal
