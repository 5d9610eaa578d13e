#include "lvreg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lvreg/error.hpp"

namespace lvreg {

using nlohmann::ordered_json;

RunConfig RunConfig::defaults(int part_count) {
  RunConfig c;
  c.structures = StructureMap::sequential(part_count);
  c.deformation.weights = LossWeights::defaults(part_count);
  return c;
}

void RunConfig::validate() const {
  if (baseline_points < 1) throw ValidationError("baseline_points must be >= 1");
  if (evaluation_points < 1) throw ValidationError("evaluation_points must be >= 1");
  deformation.validate(structures.part_count());
}

namespace {

void reject_unknown(const ordered_json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(fmt::format("config: '{}' must be an object", where));
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) throw ValidationError(fmt::format("config: unknown key '{}{}'", where, key));
  }
}

double number(const ordered_json& j, const std::string& name) {
  if (!j.is_number()) throw ValidationError(fmt::format("config: '{}' must be a number", name));
  return j.get<double>();
}

std::int64_t integer(const ordered_json& j, const std::string& name, std::int64_t min) {
  if (!j.is_number_integer()) throw ValidationError(fmt::format("config: '{}' must be an integer", name));
  const auto v = j.get<std::int64_t>();
  if (v < min) throw ValidationError(fmt::format("config: '{}' must be >= {}", name, min));
  return v;
}

std::string text(const ordered_json& j, const std::string& name) {
  if (!j.is_string()) throw ValidationError(fmt::format("config: '{}' must be a string", name));
  return j.get<std::string>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const ordered_json::exception& e) {
    throw ValidationError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  reject_unknown(j, "", {"seed", "baseline_points", "evaluation_points", "parts", "structures", "deformation",
                         "weights", "paths"});
  RunConfig c;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ValidationError("config: 'seed' must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("baseline_points")) c.baseline_points = static_cast<std::size_t>(integer(j["baseline_points"], "baseline_points", 1));
  if (j.contains("evaluation_points")) {
    c.evaluation_points = static_cast<std::size_t>(integer(j["evaluation_points"], "evaluation_points", 1));
  }

  // structures and part names
  int lv = 1;
  std::optional<std::vector<int>> values;
  if (j.contains("structures")) {
    const auto& s = j["structures"];
    reject_unknown(s, "structures.", {"lv", "parts"});
    if (s.contains("lv")) lv = static_cast<int>(integer(s["lv"], "structures.lv", 1));
    if (s.contains("parts")) {
      if (!s["parts"].is_array()) throw ValidationError("config: 'structures.parts' must be an array");
      values.emplace();
      for (const auto& v : s["parts"]) values->push_back(static_cast<int>(integer(v, "structures.parts[]", 1)));
    }
  }
  std::optional<std::vector<std::string>> names;
  if (j.contains("parts")) {
    if (!j["parts"].is_array()) throw ValidationError("config: 'parts' must be an array of names");
    names.emplace();
    for (const auto& v : j["parts"]) names->push_back(text(v, "parts[]"));
  }
  const int m = values ? static_cast<int>(values->size()) : names ? static_cast<int>(names->size()) : 5;
  if (m < 1) throw ValidationError("config: at least one part is required");
  if (!values) {
    values.emplace();
    for (int i = 0; i < m; ++i) values->push_back(lv + 1 + i);
  }
  PartLabelSet parts = names ? PartLabelSet(*names) : PartLabelSet::with_count(m);
  c.structures = StructureMap(lv, *values, parts);

  auto& d = c.deformation;
  d.weights = LossWeights::defaults(m);
  if (j.contains("deformation")) {
    const auto& s = j["deformation"];
    reject_unknown(s, "deformation.", {"mode", "iterations", "learning_rate", "n_samples", "plateau_window",
                                       "plateau_tolerance", "edge_mode"});
    if (s.contains("mode")) d.mode = parse_deform_mode(text(s["mode"], "deformation.mode"));
    if (s.contains("iterations")) d.iterations = static_cast<int>(integer(s["iterations"], "deformation.iterations", 1));
    if (s.contains("learning_rate") && !s["learning_rate"].is_null()) {
      d.learning_rate = number(s["learning_rate"], "deformation.learning_rate");
    }
    if (s.contains("n_samples")) {
      d.n_samples = static_cast<std::size_t>(integer(s["n_samples"], "deformation.n_samples", 1));
    }
    if (s.contains("plateau_window")) {
      d.plateau_window = static_cast<int>(integer(s["plateau_window"], "deformation.plateau_window", 0));
    }
    if (s.contains("plateau_tolerance")) {
      d.plateau_tolerance = number(s["plateau_tolerance"], "deformation.plateau_tolerance");
    }
    if (s.contains("edge_mode")) {
      const std::string e = text(s["edge_mode"], "deformation.edge_mode");
      if (e == "initial") {
        d.edge_mode = EdgeMode::initial;
      } else if (e == "zero") {
        d.edge_mode = EdgeMode::zero;
      } else {
        throw ValidationError(fmt::format("config: unknown edge_mode '{}'", e));
      }
    }
  }
  if (j.contains("weights")) {
    const auto& s = j["weights"];
    reject_unknown(s, "weights.", {"cf", "pm", "pm_i", "vert", "edge", "normal", "lap"});
    auto& w = d.weights;
    if (s.contains("cf")) w.cf = number(s["cf"], "weights.cf");
    if (s.contains("pm")) w.pm = number(s["pm"], "weights.pm");
    if (s.contains("vert")) w.vert = number(s["vert"], "weights.vert");
    if (s.contains("edge")) w.edge = number(s["edge"], "weights.edge");
    if (s.contains("normal")) w.normal = number(s["normal"], "weights.normal");
    if (s.contains("lap")) w.lap = number(s["lap"], "weights.lap");
    if (s.contains("pm_i")) {
      if (s["pm_i"].is_number()) {
        w.pm_i.assign(static_cast<std::size_t>(m), number(s["pm_i"], "weights.pm_i"));
      } else if (s["pm_i"].is_array()) {
        w.pm_i.clear();
        for (const auto& v : s["pm_i"]) w.pm_i.push_back(number(v, "weights.pm_i[]"));
      } else {
        throw ValidationError("config: 'weights.pm_i' must be a number or an array");
      }
    }
  }
  if (j.contains("paths")) {
    const auto& s = j["paths"];
    reject_unknown(s, "paths.", {"manifest", "out"});
    if (s.contains("manifest")) c.manifest_path = text(s["manifest"], "paths.manifest");
    if (s.contains("out")) c.out_path = text(s["out"], "paths.out");
  }
  d.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["baseline_points"] = c.baseline_points;
  j["evaluation_points"] = c.evaluation_points;
  j["parts"] = c.structures.parts.names();
  j["structures"] = {{"lv", c.structures.lv_value}, {"parts", c.structures.part_values}};
  const auto& d = c.deformation;
  ordered_json def;
  def["mode"] = to_string(d.mode);
  def["iterations"] = d.iterations;
  def["learning_rate"] = d.effective_learning_rate();
  def["n_samples"] = d.n_samples;
  def["plateau_window"] = d.plateau_window;
  def["plateau_tolerance"] = d.plateau_tolerance;
  def["edge_mode"] = d.edge_mode == EdgeMode::initial ? "initial" : "zero";
  j["deformation"] = def;
  const auto& w = d.weights;
  j["weights"] = {{"cf", w.cf},     {"pm", w.pm},         {"pm_i", w.pm_i}, {"vert", w.vert},
                  {"edge", w.edge}, {"normal", w.normal}, {"lap", w.lap}};
  ordered_json paths = ordered_json::object();
  if (c.manifest_path) paths["manifest"] = *c.manifest_path;
  if (c.out_path) paths["out"] = *c.out_path;
  j["paths"] = paths;
  return j.dump(2) + "\n";
}

}  // namespace lvreg
