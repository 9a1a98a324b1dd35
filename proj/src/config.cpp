#include "gcvamd/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gcvamd/errors.hpp"

namespace gcvamd {

namespace pt = boost::property_tree;

namespace {

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string to_text(const std::string& v) { return v; }
std::string to_text(int v) { return std::to_string(v); }
std::string to_text(std::uint64_t v) { return std::to_string(v); }
std::string to_text(double v) { return format_double(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string s = boost::algorithm::trim_copy(text);
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || end != s.data() + s.size())
    throw ConfigError("cannot parse value '" + text + "' for key " + key);
  return value;
}

void from_text(const std::string& /*key*/, const std::string& text, std::string& v) {
  v = boost::algorithm::trim_copy(text);
}
void from_text(const std::string& key, const std::string& text, int& v) { v = parse_number<int>(key, text); }
void from_text(const std::string& key, const std::string& text, std::uint64_t& v) {
  v = parse_number<std::uint64_t>(key, text);
}
void from_text(const std::string& key, const std::string& text, double& v) { v = parse_number<double>(key, text); }
void from_text(const std::string& key, const std::string& text, bool& v) {
  const std::string s = boost::algorithm::to_lower_copy(boost::algorithm::trim_copy(text));
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    v = true;
  } else if (s == "false" || s == "0" || s == "no" || s == "off") {
    v = false;
  } else {
    throw ConfigError("cannot parse boolean '" + text + "' for key " + key);
  }
}
void from_text(const std::string& key, const std::string& text, std::vector<double>& v) {
  try {
    v = parse_double_list(text);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (key " + key + ")");
  }
}

/// Calls f(section, key, field) for every scalar setting, in file order.
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("", "seed", c.seed);
  f("", "out", c.out);
  f("dataset", "kind", c.dataset.kind);
  f("dataset", "root", c.dataset.root);
  f("dataset", "manifest", c.dataset.manifest);
  f("dataset", "file_col", c.dataset.mapping.file_col);
  f("dataset", "disease_col", c.dataset.mapping.disease_col);
  f("dataset", "neo_col", c.dataset.mapping.neo_col);
  f("dataset", "drusen_col", c.dataset.mapping.drusen_col);
  f("dataset", "severity_col", c.dataset.mapping.severity_col);
  f("dataset", "n", c.dataset.synth.n);
  f("dataset", "w0", c.dataset.synth.w0);
  f("dataset", "w1", c.dataset.synth.w1);
  f("dataset", "noise", c.dataset.synth.noise);
  f("dataset", "threshold0", c.dataset.synth.threshold0);
  f("dataset", "threshold1", c.dataset.synth.threshold1);
  f("dataset", "normal_threshold", c.dataset.synth.normal_threshold);
  f("model", "geometry", c.model.geometry);
  f("model", "hidden_multiplier", c.model.hidden_multiplier);
  f("model", "scale_labels", c.model.scale_labels);
  for (const auto& [name, phase] : {std::pair{"phase1", &c.phase1}, std::pair{"phase2", &c.phase2}}) {
    const std::string p = name;
    f("schedule", p + "_epochs", phase->epochs);
    f("schedule", p + "_lr_adjacency", phase->lr_adjacency);
    f("schedule", p + "_lr_gae", phase->lr_gae);
    f("schedule", p + "_lr_rest", phase->lr_rest);
    for (const auto& [loss, w] : {std::pair{"l1", &phase->l1_weights}, std::pair{"l2", &phase->l2_weights}}) {
      const std::string q = p + "_" + loss + "_";
      f("schedule", q + "omega", w->omega);
      f("schedule", q + "beta", w->beta);
      f("schedule", q + "gamma", w->gamma);
      f("schedule", q + "nu", w->nu);
    }
  }
  f("evaluation", "truth_graph", c.evaluation.truth_graph);
  f("evaluation", "fraction", c.evaluation.fraction);
  f("evaluation", "lasso_alphas", c.evaluation.lasso_alphas);
  f("evaluation", "traversal_z0", c.evaluation.traversal[0]);
  f("evaluation", "traversal_z1", c.evaluation.traversal[1]);
  f("evaluation", "traversal_z2", c.evaluation.traversal[2]);
  f("downstream", "ae_epochs", c.downstream.ae_epochs);
  f("downstream", "dnn_epochs", c.downstream.dnn_epochs);
  f("downstream", "train_per_class", c.downstream.train_per_class);
  f("downstream", "synthetic_n", c.downstream.synthetic_n);
}

struct ValueMapRef {
  const char* field;
  std::map<std::string, int> DatasetMapping::*member;
};

constexpr ValueMapRef kValueMaps[] = {
    {"disease", &DatasetMapping::disease_values},
    {"neovascularization", &DatasetMapping::neo_values},
    {"drusen", &DatasetMapping::drusen_values},
    {"severity", &DatasetMapping::severity_values},
};

pt::ptree::path_type slash_path(const std::string& s) { return pt::ptree::path_type(s, '/'); }

}  // namespace

ConvNetConfig ModelSection::net() const {
  if (geometry == "full") return ConvNetConfig::full();
  if (geometry == "reduced") return ConvNetConfig::reduced();
  throw ConfigError("model.geometry must be 'full' or 'reduced', got '" + geometry + "'");
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, text, boost::algorithm::is_any_of(","));
  std::vector<double> values;
  for (const auto& p : parts) {
    if (boost::algorithm::trim_copy(p).empty()) throw ConfigError("empty entry in list '" + text + "'");
    values.push_back(parse_number<double>("list", p));
  }
  return values;
}

RunConfig load_run_config(const std::string& path) {
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  RunConfig config;
  std::set<std::string> known;
  visit_fields(config, [&](const std::string& section, const std::string& key, auto& field) {
    const std::string full = section.empty() ? key : section + "/" + key;
    known.insert(full);
    if (const auto node = tree.get_child_optional(slash_path(full)); node && node->empty())
      from_text(section.empty() ? key : section + "." + key, node->data(), field);
  });
  for (const auto& ref : kValueMaps) {
    const std::string section = std::string("dataset.value_maps.") + ref.field;
    const auto node = tree.get_child_optional(slash_path(section));
    if (!node) continue;
    auto& target = config.dataset.mapping.*ref.member;
    target.clear();
    for (const auto& [k, v] : *node) {
      int value = 0;
      from_text(section + "." + k, v.data(), value);
      target[boost::algorithm::to_lower_copy(k)] = value;
    }
    known.insert(section);
  }
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      if (!known.count(name)) throw ConfigError("unknown config key '" + name + "'");
      continue;
    }
    if (name.rfind("dataset.value_maps.", 0) == 0) {
      if (!known.count(name)) throw ConfigError("unknown value map section [" + name + "]");
      continue;
    }
    for (const auto& [key, child] : node)
      if (!known.count(name + "/" + key)) throw ConfigError("unknown config key '" + name + "." + key + "'");
  }
  config.model.net();
  if (config.dataset.kind != "synthetic" && config.dataset.kind != "octdl")
    throw ConfigError("dataset.kind must be 'synthetic' or 'octdl'");
  return config;
}

void write_run_config(const RunConfig& config, std::ostream& out) {
  pt::ptree tree;
  RunConfig copy = config;
  visit_fields(copy, [&](const std::string& section, const std::string& key, auto& field) {
    tree.put(slash_path(section.empty() ? key : section + "/" + key), to_text(field));
  });
  for (const auto& ref : kValueMaps) {
    pt::ptree& node = tree.put_child(slash_path(std::string("dataset.value_maps.") + ref.field), pt::ptree());
    for (const auto& [k, v] : config.dataset.mapping.*ref.member) node.put(slash_path(k), std::to_string(v));
  }
  pt::write_ini(out, tree);
}

}  // namespace gcvamd
