#include "duelvae/config.hpp"

#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

namespace duelvae {

using nlohmann::json;

namespace {

json widths_to_json(const NetworkWidths& w) {
  if (w == NetworkWidths::paper()) return "paper";
  if (w == NetworkWidths::tiny()) return "tiny";
  return json{{"encoder", w.encoder},
              {"decoder", w.decoder},
              {"pixelcnn_small", w.pixelcnn_small},
              {"pixelcnn_enlarged", w.pixelcnn_enlarged},
              {"aux_hidden", w.aux_hidden},
              {"probe_hidden", w.probe_hidden}};
}

void check_keys(const json& obj, std::string_view section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : obj.items())
    if (!ok.contains(k)) throw ConfigError(std::string(section) + ": unknown key '" + k + "'");
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <typename T>
void get_optional(const json& obj, const char* key, std::optional<T>& out) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  get_to(obj, key, v);
  out = v;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

NetworkWidths widths_from_json(const json& j) {
  if (j.is_string()) {
    if (j == "paper") return NetworkWidths::paper();
    if (j == "tiny") return NetworkWidths::tiny();
    throw ConfigError("model.widths: expected 'paper', 'tiny' or an object");
  }
  check_keys(j, "model.widths",
             {"encoder", "decoder", "pixelcnn_small", "pixelcnn_enlarged", "aux_hidden", "probe_hidden"});
  NetworkWidths w;
  get_to(j, "encoder", w.encoder);
  get_to(j, "decoder", w.decoder);
  get_to(j, "pixelcnn_small", w.pixelcnn_small);
  get_to(j, "pixelcnn_enlarged", w.pixelcnn_enlarged);
  get_to(j, "aux_hidden", w.aux_hidden);
  get_to(j, "probe_hidden", w.probe_hidden);
  return w;
}

template <typename Parse>
auto parse_enum(const json& obj, const char* key, Parse parse, decltype(parse("")) fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return parse(obj.at(key).get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const TrainConfig& c) {
  json data{{"dataset", c.data.name},
            {"root", c.data.root.string()},
            {"binarize", std::string(to_string(c.data.binarize))},
            {"data_seed", c.data.data_seed},
            {"image_size", c.data.image_size},
            {"train_limit", optional_json(c.data.train_limit)},
            {"test_limit", optional_json(c.data.test_limit)}};
  const auto& o = c.objective;
  json objective{{"beta", o.beta},
                 {"lambda", o.lambda},
                 {"aux_kind", o.aux_kind ? json(std::string(to_string(*o.aux_kind))) : json(nullptr)},
                 {"modification", std::string(to_string(o.modification))},
                 {"anneal_steps", o.anneal_steps},
                 {"free_bits_nats", o.free_bits_nats},
                 {"penalty_target_nats", o.penalty_target_nats},
                 {"penalty_gamma", o.penalty_gamma},
                 {"drop_aux_at_step", optional_json(o.drop_aux_at_step)}};
  json model{{"decoder", std::string(to_string(c.decoder))},
             {"size", std::string(to_string(c.size))},
             {"latent_dim", c.latent_dim},
             {"components", c.components},
             {"pseudo_inputs", c.pseudo_inputs},
             {"widths", widths_to_json(c.widths)}};
  json lr{{"base", c.lr.base},
          {"decay", c.lr.decay},
          {"decay_steps", c.lr.decay_steps},
          {"warmup_steps", c.lr.warmup_steps},
          {"floor", c.lr.floor}};
  json training{{"batch_size", c.batch_size},
                {"total_steps", c.total_steps},
                {"seed", c.seed},
                {"log_every", c.log_every},
                {"checkpoint_every", c.checkpoint_every},
                {"precision", c.double_precision ? "float64" : "float32"},
                {"lr", lr}};
  return json{{"data", data}, {"objective", objective}, {"model", model}, {"training", training}};
}

TrainConfig train_config_from_json(const json& doc) {
  check_keys(doc, "config", {"data", "objective", "model", "training"});
  TrainConfig c;
  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    check_keys(d, "data", {"dataset", "root", "binarize", "data_seed", "image_size", "train_limit", "test_limit"});
    get_to(d, "dataset", c.data.name);
    std::string root = c.data.root.string();
    get_to(d, "root", root);
    c.data.root = root;
    c.data.binarize = parse_enum(d, "binarize", parse_binarization, c.data.binarize);
    get_to(d, "data_seed", c.data.data_seed);
    get_to(d, "image_size", c.data.image_size);
    get_optional(d, "train_limit", c.data.train_limit);
    get_optional(d, "test_limit", c.data.test_limit);
  }
  if (doc.contains("objective")) {
    const auto& o = doc.at("objective");
    check_keys(o, "objective",
               {"beta", "lambda", "aux_kind", "modification", "anneal_steps", "free_bits_nats",
                "penalty_target_nats", "penalty_gamma", "drop_aux_at_step"});
    auto& ob = c.objective;
    get_to(o, "beta", ob.beta);
    get_to(o, "lambda", ob.lambda);
    if (o.contains("aux_kind")) {
      const auto& a = o.at("aux_kind");
      if (a.is_null() || a == "none") {
        ob.aux_kind.reset();
      } else {
        ob.aux_kind = parse_enum(o, "aux_kind", parse_aux_kind, AuxTargetKind::pixel);
      }
    }
    ob.modification = parse_enum(o, "modification", parse_modification, ob.modification);
    get_to(o, "anneal_steps", ob.anneal_steps);
    get_to(o, "free_bits_nats", ob.free_bits_nats);
    get_to(o, "penalty_target_nats", ob.penalty_target_nats);
    get_to(o, "penalty_gamma", ob.penalty_gamma);
    get_optional(o, "drop_aux_at_step", ob.drop_aux_at_step);
  }
  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    check_keys(m, "model", {"decoder", "size", "latent_dim", "components", "pseudo_inputs", "widths"});
    c.decoder = parse_enum(m, "decoder", parse_decoder_kind, c.decoder);
    c.size = parse_enum(m, "size", parse_pixelcnn_size, c.size);
    get_to(m, "latent_dim", c.latent_dim);
    get_to(m, "components", c.components);
    get_to(m, "pseudo_inputs", c.pseudo_inputs);
    if (m.contains("widths")) c.widths = widths_from_json(m.at("widths"));
  }
  if (doc.contains("training")) {
    const auto& t = doc.at("training");
    check_keys(t, "training",
               {"batch_size", "total_steps", "seed", "log_every", "checkpoint_every", "precision", "lr"});
    get_to(t, "batch_size", c.batch_size);
    get_to(t, "total_steps", c.total_steps);
    get_to(t, "seed", c.seed);
    get_to(t, "log_every", c.log_every);
    get_to(t, "checkpoint_every", c.checkpoint_every);
    if (t.contains("precision")) {
      const auto p = t.at("precision").get<std::string>();
      if (p != "float32" && p != "float64") throw ConfigError("training.precision: float32 or float64");
      c.double_precision = p == "float64";
    }
    if (t.contains("lr")) {
      const auto& l = t.at("lr");
      check_keys(l, "training.lr", {"base", "decay", "decay_steps", "warmup_steps", "floor"});
      get_to(l, "base", c.lr.base);
      get_to(l, "decay", c.lr.decay);
      get_to(l, "decay_steps", c.lr.decay_steps);
      get_to(l, "warmup_steps", c.lr.warmup_steps);
      get_to(l, "floor", c.lr.floor);
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = train_config_from_json(doc);
  // A relative data root is taken relative to the config file.
  if (!cfg.data.root.empty() && cfg.data.root.is_relative())
    cfg.data.root = path.parent_path() / cfg.data.root;
  return cfg;
}

std::string canonical_json(const json& doc) { return doc.dump(); }

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

std::string config_digest(const TrainConfig& cfg) {
  auto doc = to_json(cfg);
  doc["data"].erase("root");
  return sha256_hex(canonical_json(doc));
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like section.key=value");
  const std::string path(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = parsed;
}

}  // namespace duelvae
