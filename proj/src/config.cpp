#include "pseqseg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pseqseg {

void TrainConfig::validate() const {
  if (total_steps <= 0) throw ConfigError("total_steps must be positive");
  if (decay_step >= total_steps) throw ConfigError("decay_step must be below total_steps");
  if (labeled_per_step < 1) throw ConfigError("labeled_per_step must be >= 1");
  if (unlabeled_per_step < 0) throw ConfigError("unlabeled_per_step must be >= 0");
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (ot_k < 1) throw ConfigError("ot_k must be >= 1");
  if (view_cap < 1) throw ConfigError("view_cap must be >= 1");
  model.validate();
  filter_schedule.validate();
  placement.validate();
}

namespace {

struct FieldMap {
  std::map<std::string, std::function<void(TrainConfig&, const std::string&)>> setters;
  std::map<std::string, std::function<std::string(const TrainConfig&)>> getters;
  std::vector<std::string> order;

  template <class Get, class Set>
  void field(const std::string& key, Get get, Set set) {
    order.push_back(key);
    getters[key] = get;
    setters[key] = set;
  }
};

Scalar to_scalar(const std::string& s) {
  std::size_t pos = 0;
  const Scalar v = std::stod(s, &pos);
  if (pos != s.size()) throw ConfigError("bad number: " + s);
  return v;
}

long to_long(const std::string& s) {
  std::size_t pos = 0;
  const long v = std::stol(s, &pos);
  if (pos != s.size()) throw ConfigError("bad integer: " + s);
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("bad bool: " + s);
}

std::string fmt(Scalar v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

#define SCALAR_FIELD(key, expr)                                              \
  m.field(                                                                   \
      key, [](const TrainConfig& c) { return fmt(c.expr); },                 \
      [](TrainConfig& c, const std::string& s) { c.expr = to_scalar(s); })
#define LONG_FIELD(key, expr)                                                \
  m.field(                                                                   \
      key, [](const TrainConfig& c) { return std::to_string(c.expr); },      \
      [](TrainConfig& c, const std::string& s) { c.expr = to_long(s); })
#define INT_FIELD(key, expr)                                                 \
  m.field(                                                                   \
      key, [](const TrainConfig& c) { return std::to_string(c.expr); },      \
      [](TrainConfig& c, const std::string& s) { c.expr = static_cast<int>(to_long(s)); })
#define BOOL_FIELD(key, expr)                                                \
  m.field(                                                                   \
      key, [](const TrainConfig& c) { return c.expr ? "true" : "false"; },   \
      [](TrainConfig& c, const std::string& s) { c.expr = to_bool(s); })

const FieldMap& field_map() {
  static const FieldMap instance = [] {
    FieldMap m;
    LONG_FIELD("total_steps", total_steps);
    SCALAR_FIELD("learning_rate", learning_rate);
    SCALAR_FIELD("weight_decay", weight_decay);
    LONG_FIELD("decay_step", decay_step);
    SCALAR_FIELD("decay_factor", decay_factor);
    INT_FIELD("labeled_per_step", labeled_per_step);
    INT_FIELD("unlabeled_per_step", unlabeled_per_step);

    SCALAR_FIELD("loss_weights.lambda1", loss_weights.lambda1);
    SCALAR_FIELD("loss_weights.lambda2", loss_weights.lambda2);
    SCALAR_FIELD("loss_weights.lambda3", loss_weights.lambda3);
    SCALAR_FIELD("loss_weights.lambda4", loss_weights.lambda4);

    SCALAR_FIELD("filter_schedule.gamma_start", filter_schedule.gamma_start);
    SCALAR_FIELD("filter_schedule.gamma_peak", filter_schedule.gamma_peak);
    LONG_FIELD("filter_schedule.step_interval", filter_schedule.step_interval);
    SCALAR_FIELD("filter_schedule.a0", filter_schedule.a0);
    m.field(
        "filter_schedule.mode",
        [](const TrainConfig& c) { return to_string(c.filter_schedule.mode); },
        [](TrainConfig& c, const std::string& s) {
          c.filter_schedule.mode = filter_mode_from_string(s);
        });

    SCALAR_FIELD("augmentation.weak.rotation_deg", augmentation.weak.rotation_deg);
    SCALAR_FIELD("augmentation.weak.translation_frac", augmentation.weak.translation_frac);
    SCALAR_FIELD("augmentation.weak.brightness_delta", augmentation.weak.brightness_delta);
    SCALAR_FIELD("augmentation.weak.scale_lo", augmentation.weak.scale_lo);
    SCALAR_FIELD("augmentation.weak.scale_hi", augmentation.weak.scale_hi);
    SCALAR_FIELD("augmentation.weak.crop_frac", augmentation.weak.crop_frac);

    SCALAR_FIELD("augmentation.strong.brightness", augmentation.strong.brightness);
    SCALAR_FIELD("augmentation.strong.contrast", augmentation.strong.contrast);
    SCALAR_FIELD("augmentation.strong.saturation", augmentation.strong.saturation);
    SCALAR_FIELD("augmentation.strong.temperature", augmentation.strong.temperature);
    SCALAR_FIELD("augmentation.strong.blur_sigma_lo", augmentation.strong.blur_sigma_lo);
    SCALAR_FIELD("augmentation.strong.blur_sigma_hi", augmentation.strong.blur_sigma_hi);
    SCALAR_FIELD("augmentation.strong.grayscale_prob", augmentation.strong.grayscale_prob);

    SCALAR_FIELD("augmentation.per_object.scale_lo", augmentation.per_object.scale_lo);
    SCALAR_FIELD("augmentation.per_object.scale_hi", augmentation.per_object.scale_hi);
    SCALAR_FIELD("augmentation.per_object.rotation_deg", augmentation.per_object.rotation_deg);
    SCALAR_FIELD("augmentation.per_object.flip_prob", augmentation.per_object.flip_prob);
    SCALAR_FIELD("augmentation.per_object.brightness_delta",
                 augmentation.per_object.brightness_delta);

    INT_FIELD("synthesis.insert_min", synthesis.insert_min);
    INT_FIELD("synthesis.insert_max", synthesis.insert_max);
    SCALAR_FIELD("synthesis.removal_prob", synthesis.removal_prob);
    INT_FIELD("synthesis.x2_insert_min", synthesis.x2_insert_min);
    INT_FIELD("synthesis.x2_insert_max", synthesis.x2_insert_max);
    SCALAR_FIELD("synthesis.overlap_cap", synthesis.overlap_cap);
    INT_FIELD("synthesis.max_placement_attempts", synthesis.max_placement_attempts);
    SCALAR_FIELD("synthesis.min_visible_frac", synthesis.min_visible_frac);

    SCALAR_FIELD("placement.alpha", placement.alpha);
    SCALAR_FIELD("placement.beta", placement.beta);

    INT_FIELD("model.classes", model.classes);
    INT_FIELD("model.queries", model.queries);
    INT_FIELD("model.embed_dim", model.embed_dim);
    INT_FIELD("model.key_dim", model.key_dim);
    INT_FIELD("model.value_dim", model.value_dim);
    INT_FIELD("model.hidden_dim", model.hidden_dim);
    INT_FIELD("model.width0", model.widths[0]);
    INT_FIELD("model.width1", model.widths[1]);
    INT_FIELD("model.width2", model.widths[2]);
    INT_FIELD("model.input_h", model.input_h);
    INT_FIELD("model.input_w", model.input_w);

    BOOL_FIELD("use_m2b", use_m2b);
    BOOL_FIELD("use_mlm", use_mlm);
    SCALAR_FIELD("mask_gamma_override", mask_gamma_override);
    INT_FIELD("ot_k", ot_k);
    INT_FIELD("view_cap", view_cap);
    BOOL_FIELD("embed_average_positives", embed_average_positives);
    BOOL_FIELD("embed_negatives_both_frames", embed_negatives_both_frames);
    BOOL_FIELD("grow_bank", grow_bank);
    SCALAR_FIELD("grow_bank_iou", grow_bank_iou);

    m.field(
        "seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
        [](TrainConfig& c, const std::string& s) {
          c.seed = static_cast<std::uint64_t>(std::stoull(s));
        });
    LONG_FIELD("log_interval", log_interval);
    LONG_FIELD("checkpoint_interval", checkpoint_interval);
    INT_FIELD("threads", threads);
    return m;
  }();
  return instance;
}

#undef SCALAR_FIELD
#undef LONG_FIELD
#undef INT_FIELD
#undef BOOL_FIELD

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig config;
  const auto& m = field_map();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key: value'");
    }
    const std::string key = trim(line.substr(0, colon));
    const std::string value = trim(line.substr(colon + 1));
    const auto it = m.setters.find(key);
    if (it == m.setters.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second(config, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  // The filter schedule always spans the whole run.
  config.filter_schedule.total_steps = config.total_steps;
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_train_config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

std::string dump_train_config(const TrainConfig& config) {
  const auto& m = field_map();
  std::ostringstream out;
  for (const auto& key : m.order) {
    out << key << ": " << m.getters.at(key)(config) << "\n";
  }
  return out.str();
}

}  // namespace pseqseg
