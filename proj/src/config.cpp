#include "biasloss/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "biasloss/errors.hpp"

#ifndef BIASLOSS_DEFAULT_DATA_DIR
#define BIASLOSS_DEFAULT_DATA_DIR "/root/data"
#endif

namespace biasloss {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(v))
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end)
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + text + "'");
}

struct KeyDef {
  const char* key;
  const char* help;
  bool semantic;  // contributes to the config hash
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define BL_SIZE(field)                                                                              \
  [](const TrainConfig& c) { return std::to_string(c.field); },                                     \
      [](TrainConfig& c, const std::string& v) { c.field = static_cast<std::size_t>(parse_uint(#field, v)); }
#define BL_DOUBLE(name, field)                                                                      \
  [](const TrainConfig& c) { return fmt_double(c.field); },                                         \
      [](TrainConfig& c, const std::string& v) { c.field = parse_double(name, v); }
#define BL_BOOL(name, field)                                                                        \
  [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); },                     \
      [](TrainConfig& c, const std::string& v) { c.field = parse_bool(name, v); }
#define BL_STRING(field)                                                                            \
  [](const TrainConfig& c) { return c.field; }, [](TrainConfig& c, const std::string& v) { c.field = v; }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      {"dataset", "mnist or cifar10", true, BL_STRING(dataset)},
      {"data_dir", "dataset root (default: $DATA_DIR)", false, BL_STRING(data_dir)},
      {"train_limit", "use only the first N training samples (0 = all)", true, BL_SIZE(train_limit)},
      {"test_limit", "use only the first N test samples (0 = all)", true, BL_SIZE(test_limit)},
      {"loss", "ce, focal or bias", true,
       [](const TrainConfig& c) { return loss_kind_name(c.loss.kind); },
       [](TrainConfig& c, const std::string& v) {
         try {
           c.loss.kind = loss_kind_from_name(v);
         } catch (const Error& e) {
           throw ConfigError(e.what());
         }
       }},
      {"alpha", "bias loss exponent scale", true, BL_DOUBLE("alpha", loss.bias.alpha)},
      {"beta", "bias loss offset", true, BL_DOUBLE("beta", loss.bias.beta)},
      {"clamp_lo", "lower bound of the bias weight", true, BL_DOUBLE("clamp_lo", loss.bias.clamp_lo)},
      {"clamp_hi", "upper bound of the bias weight", true, BL_DOUBLE("clamp_hi", loss.bias.clamp_hi)},
      {"detach_weight", "treat the bias weight as a constant for gradients", true,
       BL_BOOL("detach_weight", loss.bias.detach_weight)},
      {"gamma", "focal loss focusing parameter", true, BL_DOUBLE("gamma", loss.focal_gamma)},
      {"epochs", "number of training epochs", true, BL_SIZE(epochs)},
      {"batch_size", "training batch size", true, BL_SIZE(batch_size)},
      {"eval_batch_size", "evaluation batch size", true, BL_SIZE(eval_batch_size)},
      {"lr0", "initial learning rate", true, BL_DOUBLE("lr0", lr0)},
      {"momentum", "SGD momentum", true, BL_DOUBLE("momentum", momentum)},
      {"weight_decay", "L2 weight decay (not applied to batchnorm parameters)", true,
       BL_DOUBLE("weight_decay", weight_decay)},
      {"schedule", "auto, none, or epoch:multiplier list such as 60:0.2,120:0.2", true, BL_STRING(schedule)},
      {"seed", "seed for init, shuffling, augmentation and dropout", true,
       [](const TrainConfig& c) { return std::to_string(c.seed); },
       [](TrainConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); }},
      {"width_multiplier", "channel width multiplier", true, BL_DOUBLE("width_multiplier", width_multiplier)},
      {"dropout", "dropout probability before the classifier", true, BL_DOUBLE("dropout", dropout)},
      {"use_se", "squeeze-and-excitation in inverted residual blocks", true, BL_BOOL("use_se", use_se)},
      {"hflip", "auto, true or false", true, BL_STRING(hflip)},
      {"rotate_deg", "random rotation range in degrees (+/-)", true, BL_DOUBLE("rotate_deg", rotate_deg)},
      {"prefetch", "build training batches on a background thread", false, BL_BOOL("prefetch", prefetch)},
      {"log_wall_time", "record elapsed seconds in the run log (otherwise 0)", false,
       BL_BOOL("log_wall_time", log_wall_time)},
  };
  return defs;
}

#undef BL_SIZE
#undef BL_DOUBLE
#undef BL_BOOL
#undef BL_STRING

const KeyDef& find_key(const std::string& key) {
  for (const auto& d : key_defs())
    if (key == d.key) return d;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, trim(value)); }

std::string TrainConfig::get(const std::string& key) const { return find_key(key).get(*this); }

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& d : key_defs()) out.emplace_back(d.key);
    return out;
  }();
  return names;
}

std::string TrainConfig::help(const std::string& key) { return find_key(key).help; }

void TrainConfig::validate() const {
  dataset_geometry(dataset);
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch sizes must be at least 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(loss.focal_gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (!(rotate_deg >= 0.0 && rotate_deg <= 180.0)) throw ConfigError("rotate_deg must lie in [0, 180]");
  if (hflip != "auto" && hflip != "true" && hflip != "false") throw ConfigError("hflip must be auto, true or false");
  try {
    loss.bias.validate();
    resolved_schedule();
    model_spec().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::vector<ScheduleStep> parse_schedule(const std::string& text) {
  std::vector<ScheduleStep> out;
  if (text == "none" || text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule entry '" + item + "' is not epoch:multiplier");
    ScheduleStep st;
    st.epoch = static_cast<std::size_t>(parse_uint("schedule", trim(item.substr(0, colon))));
    st.multiplier = parse_double("schedule", trim(item.substr(colon + 1)));
    if (!out.empty() && st.epoch <= out.back().epoch)
      throw ConfigError("schedule epochs must be strictly increasing");
    out.push_back(st);
  }
  return out;
}

std::vector<ScheduleStep> scaled_schedule(std::size_t epochs) {
  std::vector<ScheduleStep> out;
  for (double frac : {0.3, 0.6, 0.8}) {
    const auto e = static_cast<std::size_t>(std::lround(frac * static_cast<double>(epochs)));
    if (e == 0) continue;
    if (!out.empty() && out.back().epoch == e) {
      out.back().multiplier *= 0.2;
    } else {
      out.push_back({e, 0.2});
    }
  }
  return out;
}

std::vector<ScheduleStep> TrainConfig::resolved_schedule() const {
  if (schedule == "auto") return scaled_schedule(epochs);
  return parse_schedule(schedule);
}

double lr_at(std::size_t epoch, double lr0, const std::vector<ScheduleStep>& schedule) {
  double lr = lr0;
  for (const auto& st : schedule)
    if (st.epoch <= epoch) lr *= st.multiplier;
  return lr;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) { return lr_at(epoch, cfg.lr0, cfg.resolved_schedule()); }

bool TrainConfig::resolved_hflip() const {
  if (hflip == "auto") return dataset == "cifar10";
  return hflip == "true";
}

std::filesystem::path TrainConfig::resolved_data_dir() const {
  if (!data_dir.empty()) return data_dir;
  if (const char* env = std::getenv("DATA_DIR"); env && *env) return env;
  return BIASLOSS_DEFAULT_DATA_DIR;
}

MicroNetSpec TrainConfig::model_spec() const {
  const DatasetGeometry geo = dataset_geometry(dataset);
  MicroNetSpec spec = MicroNetSpec::micro(geo.channels, geo.side, geo.num_classes);
  spec.width_multiplier = width_multiplier;
  spec.dropout = dropout;
  spec.use_se = use_se;
  return spec;
}

std::string TrainConfig::serialize() const {
  std::string out;
  for (const auto& d : key_defs()) out += std::string(d.key) + "=" + d.get(*this) + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t TrainConfig::hash() const {
  std::string text;
  for (const auto& d : key_defs())
    if (d.semantic) text += std::string(d.key) + "=" + d.get(*this) + "\n";
  return fnv1a64(text);
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

DatasetGeometry dataset_geometry(const std::string& dataset) {
  if (dataset == "mnist") return {1, 28, 10};
  if (dataset == "cifar10") return {3, 32, 10};
  throw ConfigError("unknown dataset '" + dataset + "' (expected mnist or cifar10)");
}

}  // namespace biasloss
