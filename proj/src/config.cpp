#include "sapl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace sapl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::string> split(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(T pipeline::TrainConfig::*m, const std::string& key) {
  return {[=](RunConfig& c, const std::string& v) { c.train.*m = parse_number<T>(key, v); },
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.train.*m);
            else return std::to_string(c.train.*m);
          }};
}

template <typename T>
Field top_number(T RunConfig::*m, const std::string& key) {
  return {[=](RunConfig& c, const std::string& v) { c.*m = parse_number<T>(key, v); },
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*m);
            else return std::to_string(c.*m);
          }};
}

Field flag(bool pipeline::TrainConfig::*m, const std::string& key) {
  return {[=](RunConfig& c, const std::string& v) { c.train.*m = parse_bool(key, v); },
          [=](const RunConfig& c) { return std::string(c.train.*m ? "true" : "false"); }};
}

Field path(std::filesystem::path RunConfig::*m) {
  return {[=](RunConfig& c, const std::string& v) { c.*m = v; },
          [=](const RunConfig& c) { return (c.*m).string(); }};
}

Field layout(corpus::Layout RunConfig::*m) {
  return {[=](RunConfig& c, const std::string& v) {
            try {
              c.*m = corpus::parse_layout(v);
            } catch (const std::exception& e) {
              throw ConfigError(e.what());
            }
          },
          [=](const RunConfig& c) { return corpus::to_string(c.*m); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    m["backbone"] = {[](RunConfig& c, const std::string& v) {
                       if (v != "toy" && v != "vit-l14-336") throw ConfigError("unknown backbone: " + v);
                       c.backbone = v;
                     },
                     [](const RunConfig& c) { return c.backbone; }};
    m["weights"] = path(&RunConfig::weights);
    m["data"] = path(&RunConfig::data);
    m["layout"] = layout(&RunConfig::layout);
    m["eval_data"] = path(&RunConfig::eval_data);
    m["eval_layout"] = layout(&RunConfig::eval_layout);
    m["checkpoint"] = path(&RunConfig::checkpoint);
    m["out"] = path(&RunConfig::out);
    m["threshold"] = top_number(&RunConfig::threshold, "threshold");
    m["synthetic_splices"] = top_number(&RunConfig::synthetic_splices, "synthetic_splices");
    m["synthetic_authentic"] = top_number(&RunConfig::synthetic_authentic, "synthetic_authentic");
    m["synthetic_size"] = top_number(&RunConfig::synthetic_size, "synthetic_size");
    m["band_radius"] = top_number(&RunConfig::band_radius, "band_radius");
    m["variance_window"] = top_number(&RunConfig::variance_window, "variance_window");
    m["sweep_kinds"] = {[](RunConfig& c, const std::string& v) {
                          c.sweep_kinds.clear();
                          try {
                            for (const auto& k : split(v)) c.sweep_kinds.push_back(corpus::parse_perturbation_kind(k));
                          } catch (const std::exception& e) {
                            throw ConfigError(e.what());
                          }
                          if (c.sweep_kinds.empty()) throw ConfigError("sweep_kinds must not be empty");
                        },
                        [](const RunConfig& c) {
                          std::string s;
                          for (auto k : c.sweep_kinds) s += (s.empty() ? "" : ",") + corpus::to_string(k);
                          return s;
                        }};
    m["seed"] = number(&pipeline::TrainConfig::seed, "seed");
    m["epochs"] = number(&pipeline::TrainConfig::epochs, "epochs");
    m["batch_size"] = number(&pipeline::TrainConfig::batch_size, "batch_size");
    m["learning_rate"] = number(&pipeline::TrainConfig::learning_rate, "learning_rate");
    m["weight_decay"] = number(&pipeline::TrainConfig::weight_decay, "weight_decay");
    m["w_max"] = number(&pipeline::TrainConfig::w_max, "w_max");
    m["prompt_length"] = number(&pipeline::TrainConfig::prompt_length, "prompt_length");
    m["queue_length"] = number(&pipeline::TrainConfig::queue_length, "queue_length");
    m["top_k"] = number(&pipeline::TrainConfig::top_k, "top_k");
    m["tau"] = number(&pipeline::TrainConfig::tau, "tau");
    m["contrast_dim"] = number(&pipeline::TrainConfig::contrast_dim, "contrast_dim");
    m["attention_heads"] = number(&pipeline::TrainConfig::attention_heads, "attention_heads");
    m["warmup"] = number(&pipeline::TrainConfig::warmup, "warmup");
    m["grad_clip"] = number(&pipeline::TrainConfig::grad_clip, "grad_clip");
    m["ecpl"] = flag(&pipeline::TrainConfig::ecpl, "ecpl");
    m["hecl"] = flag(&pipeline::TrainConfig::hecl, "hecl");
    m["ecpl_edge"] = flag(&pipeline::TrainConfig::ecpl_edge, "ecpl_edge");
    m["hecl_edge"] = flag(&pipeline::TrainConfig::hecl_edge, "hecl_edge");
    m["prompt_style"] = {[](RunConfig& c, const std::string& v) {
                           try {
                             c.train.prompt_style = ecpl::parse_prompt_style(v);
                           } catch (const std::exception& e) {
                             throw ConfigError(e.what());
                           }
                         },
                         [](const RunConfig& c) { return ecpl::to_string(c.train.prompt_style); }};
    m["layers"] = {[](RunConfig& c, const std::string& v) {
                     c.train.layers.clear();
                     for (const auto& s : split(v)) c.train.layers.insert(parse_number<int>("layers", s));
                     if (c.train.layers.empty()) throw ConfigError("layers must not be empty");
                     c.layers_set = true;
                   },
                   [](const RunConfig& c) {
                     std::string s;
                     for (int l : c.train.layers) s += (s.empty() ? "" : ",") + std::to_string(l);
                     return s;
                   }};
    m["canny_low"] = {[](RunConfig& c, const std::string& v) { c.train.edge.canny.low = parse_number<double>("canny_low", v); },
                      [](const RunConfig& c) { return fmt(c.train.edge.canny.low); }};
    m["canny_high"] = {[](RunConfig& c, const std::string& v) { c.train.edge.canny.high = parse_number<double>("canny_high", v); },
                       [](const RunConfig& c) { return fmt(c.train.edge.canny.high); }};
    return m;
  }();
  return f;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key: " + key);
  it->second.set(*this, trim(value));
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, f] : fields()) os << k << " = " << f.get(*this) << '\n';
  return os.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(n) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str());
}

backbone::BackboneConfig backbone_config(const RunConfig& c) {
  return c.backbone == "toy" ? backbone::toy_config() : backbone::vit_l14_336_config();
}

void finalize(RunConfig& c) {
  if (!c.layers_set) c.train.layers = pipeline::default_layers(backbone_config(c).vision.layers);
  if (c.backbone != "toy" && c.weights.empty()) throw ConfigError("backbone " + c.backbone + " needs weights");
  if (!(c.threshold >= 0 && c.threshold <= 1)) throw ConfigError("threshold must lie in [0,1]");
  if (c.synthetic_splices < 0 || c.synthetic_authentic < 0 || c.synthetic_size < 64)
    throw ConfigError("synthetic corpus settings out of range");
}

RunConfig resolve(const std::map<std::string, std::string>& file, const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  for (const auto& [k, v] : file) c.set(k, v);
  for (const auto& [k, v] : overrides) c.set(k, v);
  finalize(c);
  return c;
}

}  // namespace sapl
