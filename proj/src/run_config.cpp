#include "kpc/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kpc/errors.hpp"

namespace kpc {

namespace {

enum class FieldType { text, count, u64, real, flag };

struct Field {
  FieldType type;
  std::string doc;
  std::function<void*(RunConfig&)> ref;
};

template <auto Member>
Field field(FieldType t, std::string doc) {
  return Field{t, std::move(doc), [](RunConfig& c) -> void* { return &(c.*Member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"model", field<&RunConfig::model>(FieldType::text, "head to train: condensed | baseline")},
      {"channels", field<&RunConfig::channels>(FieldType::count, "feature channels C")},
      {"height", field<&RunConfig::height>(FieldType::count, "proposal grid height H")},
      {"width", field<&RunConfig::width>(FieldType::count, "proposal grid width W")},
      {"num_classes", field<&RunConfig::num_classes>(FieldType::count, "foreground classes")},
      {"parts_per_class", field<&RunConfig::parts_per_class>(FieldType::count, "planted signatures per class D")},
      {"signature_norm", field<&RunConfig::signature_norm>(FieldType::real, "norm of each planted signature")},
      {"noise_sigma", field<&RunConfig::noise_sigma>(FieldType::real, "std-dev of background noise")},
      {"n_train", field<&RunConfig::n_train>(FieldType::count, "training examples")},
      {"n_test", field<&RunConfig::n_test>(FieldType::count, "test examples")},
      {"seed", field<&RunConfig::seed>(FieldType::u64, "dataset seed")},
      {"background_fraction", field<&RunConfig::background_fraction>(FieldType::real, "share of background examples")},
      {"num_parts", field<&RunConfig::num_parts>(FieldType::count, "key parts K")},
      {"num_blocks", field<&RunConfig::num_blocks>(FieldType::count, "concentration blocks")},
      {"reduction", field<&RunConfig::reduction>(FieldType::count, "channel reduction inside blocks")},
      {"groups", field<&RunConfig::groups>(FieldType::count, "groups of the 3x3 block convolution")},
      {"dilation", field<&RunConfig::dilation>(FieldType::count, "dilation of the 3x3 block convolution")},
      {"alpha", field<&RunConfig::alpha>(FieldType::real, "confidence offset of the truncated maximum squash")},
      {"epsilon", field<&RunConfig::epsilon>(FieldType::real, "denominator slack of the truncated maximum squash")},
      {"gather_refined", field<&RunConfig::gather_refined>(FieldType::flag, "gather key-part fibers after concentration")},
      {"sub_len", field<&RunConfig::sub_len>(FieldType::count, "pooled global length L")},
      {"channel_keep", field<&RunConfig::channel_keep>(FieldType::real, "fraction of channels kept by global modeling")},
      {"hidden", field<&RunConfig::hidden>(FieldType::count, "hidden FC width")},
      {"reg_per_class", field<&RunConfig::reg_per_class>(FieldType::flag, "per-class box regression")},
      {"init_seed", field<&RunConfig::init_seed>(FieldType::u64, "parameter initialization seed")},
      {"learning_rate", field<&RunConfig::learning_rate>(FieldType::real, "SGD learning rate")},
      {"momentum", field<&RunConfig::momentum>(FieldType::real, "SGD momentum")},
      {"epochs", field<&RunConfig::epochs>(FieldType::count, "training epochs")},
      {"batch_size", field<&RunConfig::batch_size>(FieldType::count, "minibatch size")},
      {"okpd_weight", field<&RunConfig::okpd_weight>(FieldType::real, "weight of the key-part objective")},
      {"train_seed", field<&RunConfig::train_seed>(FieldType::u64, "shuffling seed")},
      {"use_ld", field<&RunConfig::use_ld>(FieldType::flag, "enable the discriminative loss")},
      {"use_lu", field<&RunConfig::use_lu>(FieldType::flag, "enable the uniqueness loss")},
      {"okpd_mean", field<&RunConfig::okpd_mean>(FieldType::flag, "average the discriminative loss over K")},
  };
  return table;
}

const Field& lookup(const std::string& key) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  auto& mut = const_cast<RunConfig&>(cfg);
  for (const auto& key : RunConfig::keys()) {
    const Field& f = lookup(key);
    void* p = f.ref(mut);
    switch (f.type) {
      case FieldType::text: j[key] = *static_cast<std::string*>(p); break;
      case FieldType::count: j[key] = *static_cast<std::size_t*>(p); break;
      case FieldType::u64: j[key] = *static_cast<std::uint64_t*>(p); break;
      case FieldType::real: j[key] = *static_cast<double*>(p); break;
      case FieldType::flag: j[key] = *static_cast<bool*>(p); break;
    }
  }
  return j;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> order = {
      "model", "channels", "height", "width", "num_classes", "parts_per_class", "signature_norm", "noise_sigma",
      "n_train", "n_test", "seed", "background_fraction", "num_parts", "num_blocks", "reduction", "groups",
      "dilation", "alpha", "epsilon", "gather_refined", "sub_len", "channel_keep", "hidden", "reg_per_class",
      "init_seed", "learning_rate", "momentum", "epochs", "batch_size", "okpd_weight", "train_seed", "use_ld",
      "use_lu", "okpd_mean"};
  return order;
}

std::string RunConfig::describe(const std::string& key) { return lookup(key).doc; }

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field& f = lookup(key);
  void* p = f.ref(*this);
  switch (f.type) {
    case FieldType::text: *static_cast<std::string*>(p) = value; break;
    case FieldType::count: *static_cast<std::size_t*>(p) = parse_number<std::size_t>(key, value); break;
    case FieldType::u64: *static_cast<std::uint64_t*>(p) = parse_number<std::uint64_t>(key, value); break;
    case FieldType::real: *static_cast<double*>(p) = parse_real(key, value); break;
    case FieldType::flag:
      if (value == "true" || value == "1") {
        *static_cast<bool*>(p) = true;
      } else if (value == "false" || value == "0") {
        *static_cast<bool*>(p) = false;
      } else {
        throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
      }
      break;
  }
  if (key == "model" && model != "condensed" && model != "baseline") {
    throw ConfigError("config key 'model' must be condensed or baseline");
  }
}

std::string RunConfig::get(const std::string& key) const {
  const auto j = to_json(*this).at(key);
  return j.is_string() ? j.get<std::string>() : j.dump();
}

std::string RunConfig::dump() const { return to_json(*this).dump(2) + "\n"; }

std::string RunConfig::dump_compact() const { return to_json(*this).dump(); }

RunConfig RunConfig::parse(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    cfg.set(key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path_or_default) {
  if (path_or_default.empty() || path_or_default == "default") return RunConfig{};
  std::ifstream in(path_or_default);
  if (!in) throw IoError("cannot open config " + path_or_default);
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

ToyDatasetSpec RunConfig::dataset_spec() const {
  ToyDatasetSpec s;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.num_classes = num_classes;
  s.parts_per_class = parts_per_class;
  s.signature_norm = signature_norm;
  s.noise_sigma = noise_sigma;
  s.n_train = n_train;
  s.n_test = n_test;
  s.seed = seed;
  s.background_fraction = background_fraction;
  return s;
}

OkpdConfig RunConfig::okpd_config() const {
  OkpdConfig o;
  o.channels = channels;
  o.num_parts = num_parts;
  o.num_blocks = num_blocks;
  o.reduction = reduction;
  o.groups = groups;
  o.dilation = dilation;
  o.alpha = alpha;
  o.epsilon = epsilon;
  return o;
}

HeadConfig RunConfig::head_config() const {
  HeadConfig h;
  h.channels = channels;
  h.height = height;
  h.width = width;
  h.num_parts = num_parts;
  h.sub_len = sub_len;
  h.channel_keep = channel_keep;
  h.hidden = hidden;
  h.num_classes = num_classes;
  h.reg_per_class = reg_per_class;
  return h;
}

BaselineConfig RunConfig::baseline_config() const {
  BaselineConfig b;
  b.channels = channels;
  b.height = height;
  b.width = width;
  b.hidden = hidden;
  b.num_classes = num_classes;
  b.reg_per_class = reg_per_class;
  return b;
}

ToyModelConfig RunConfig::model_config() const {
  ToyModelConfig m;
  m.kind = model == "baseline" ? ModelKind::baseline : ModelKind::condensed;
  m.okpd = okpd_config();
  m.head = head_config();
  m.baseline = baseline_config();
  m.gather_refined = gather_refined;
  m.init_seed = init_seed;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = learning_rate;
  t.momentum = momentum;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.okpd_weight = okpd_weight;
  t.seed = train_seed;
  t.use_ld = use_ld;
  t.use_lu = use_lu;
  t.okpd_mean = okpd_mean;
  return t;
}

}  // namespace kpc
