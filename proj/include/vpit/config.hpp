#ifndef VPIT_CONFIG_HPP
#define VPIT_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "vpit/data.hpp"
#include "vpit/nn/model.hpp"
#include "vpit/pillars.hpp"
#include "vpit/tracker.hpp"
#include "vpit/train.hpp"

namespace vpit {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetConfig {
  int train_sequences = 20;
  int val_sequences = 2;
  int test_sequences = 5;
};

struct EvalConfig {
  std::string mode = "offline";
  double data_rate = 10.0;
  double latency = 0.0;  // seconds; <= 0 with measured = false means zero
  bool measured = false;
  int jobs = 0;          // 0 = hardware concurrency
};

struct AppConfig {
  PillarConfig pillars;
  nn::FgnConfig fgn;
  TrackerConfig tracker;
  TrainConfig train;
  SceneConfig scene;
  DatasetConfig dataset;
  EvalConfig eval;

  void validate() const {
    pillars.validate();
    fgn.validate();
    tracker.validate();
    train.validate();
    scene.validate();
    if (dataset.train_sequences < 0 || dataset.val_sequences < 0 || dataset.test_sequences < 0) {
      throw ConfigError("dataset sequence counts must be >= 0");
    }
    if (!(eval.data_rate > 0.0)) throw ConfigError("eval.data_rate must be > 0");
    if (eval.jobs < 0) throw ConfigError("eval.jobs must be >= 0");
  }

  std::size_t jobs() const {
    if (eval.jobs > 0) return static_cast<std::size_t>(eval.jobs);
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
  }
};

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t is assumed to be 64-bit");

using FieldRef = std::variant<double*, int*, std::int64_t*, std::uint64_t*, bool*, std::string*,
                              PenaltyKind*>;

struct Field {
  std::string key;  // section.name
  FieldRef ref;
};

inline std::vector<Field> config_fields(AppConfig& c) {
  return {
      {"grid.x_min", &c.pillars.grid.x_min},
      {"grid.x_max", &c.pillars.grid.x_max},
      {"grid.y_min", &c.pillars.grid.y_min},
      {"grid.y_max", &c.pillars.grid.y_max},
      {"grid.z_min", &c.pillars.grid.z_min},
      {"grid.z_max", &c.pillars.grid.z_max},
      {"grid.pillar_size", &c.pillars.grid.pillar_size},
      {"pillars.max_points_per_pillar", &c.pillars.max_points_per_pillar},
      {"pillars.max_pillars", &c.pillars.max_pillars},
      {"pillars.feature_channels", &c.pillars.feature_channels},
      {"fgn.blocks", &c.fgn.blocks},
      {"fgn.layers_per_block", &c.fgn.layers_per_block},
      {"fgn.channels", &c.fgn.channels},
      {"fgn.first_stride", &c.fgn.first_stride},
      {"fgn.kernel", &c.fgn.kernel},
      {"tracker.context_amount", &c.tracker.context_amount},
      {"tracker.search_scale", &c.tracker.search_scale},
      {"tracker.rotations_count", &c.tracker.rotations_count},
      {"tracker.rotation_step", &c.tracker.rotation_step},
      {"tracker.rotation_penalty", &c.tracker.rotation_penalty},
      {"tracker.rotation_interpolation", &c.tracker.rotation_interpolation},
      {"tracker.window_influence", &c.tracker.window_influence},
      {"tracker.score_upscale", &c.tracker.score_upscale},
      {"tracker.target_interp_size", &c.tracker.target_interp_size},
      {"tracker.search_interp_size", &c.tracker.search_interp_size},
      {"tracker.offset_interpolation", &c.tracker.offset_interpolation},
      {"tracker.feature_merge_scale", &c.tracker.feature_merge_scale},
      {"tracker.extrapolation", &c.tracker.extrapolation},
      {"tracker.penalty_kind", &c.tracker.penalty_kind},
      {"tracker.sigma_plus", &c.tracker.sigma_plus},
      {"tracker.sigma_minus", &c.tracker.sigma_minus},
      {"tracker.hash_sectors", &c.tracker.hash_sectors},
      {"train.steps", &c.train.steps},
      {"train.lr", &c.train.lr},
      {"train.label_radius", &c.train.label_radius},
      {"train.v_min", &c.train.v_min},
      {"train.v_max", &c.train.v_max},
      {"train.samples_per_object", &c.train.samples_per_object},
      {"train.detection_pairs", &c.train.detection_pairs},
      {"train.shift", &c.train.shift},
      {"train.global_rotation", &c.train.global_rotation},
      {"train.global_translation", &c.train.global_translation},
      {"train.max_rotation", &c.train.max_rotation},
      {"train.max_translation", &c.train.max_translation},
      {"train.checkpoint_every", &c.train.checkpoint_every},
      {"train.seed", &c.train.seed},
      {"scene.objects", &c.scene.objects},
      {"scene.length_min", &c.scene.length.lo},
      {"scene.length_max", &c.scene.length.hi},
      {"scene.width_min", &c.scene.width.lo},
      {"scene.width_max", &c.scene.width.hi},
      {"scene.height_min", &c.scene.height.lo},
      {"scene.height_max", &c.scene.height.hi},
      {"scene.speed_min", &c.scene.speed.lo},
      {"scene.speed_max", &c.scene.speed.hi},
      {"scene.turn_rate_min", &c.scene.turn_rate.lo},
      {"scene.turn_rate_max", &c.scene.turn_rate.hi},
      {"scene.spawn_min", &c.scene.spawn_distance.lo},
      {"scene.spawn_max", &c.scene.spawn_distance.hi},
      {"scene.ground_z", &c.scene.ground_z},
      {"scene.density", &c.scene.density},
      {"scene.clutter", &c.scene.clutter},
      {"scene.clutter_extent", &c.scene.clutter_extent},
      {"scene.noise", &c.scene.noise},
      {"scene.frames", &c.scene.frames},
      {"scene.data_rate", &c.scene.data_rate},
      {"scene.seed", &c.scene.seed},
      {"dataset.train_sequences", &c.dataset.train_sequences},
      {"dataset.val_sequences", &c.dataset.val_sequences},
      {"dataset.test_sequences", &c.dataset.test_sequences},
      {"eval.mode", &c.eval.mode},
      {"eval.data_rate", &c.eval.data_rate},
      {"eval.latency", &c.eval.latency},
      {"eval.measured", &c.eval.measured},
      {"eval.jobs", &c.eval.jobs},
  };
}

inline std::vector<std::string> config_keys() {
  AppConfig c;
  std::vector<std::string> keys;
  for (const auto& f : config_fields(c)) keys.push_back(f.key);
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("invalid value '" + text + "' for " + key);
  return v;
}

}  // namespace detail

inline void set_field(const Field& f, const std::string& raw) {
  const std::string text = detail::trim(raw);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1" || text == "on") {
            *p = true;
          } else if (text == "false" || text == "0" || text == "off") {
            *p = false;
          } else {
            throw ConfigError("invalid boolean '" + text + "' for " + f.key);
          }
        } else if constexpr (std::is_same_v<T, std::string>) {
          *p = text;
        } else if constexpr (std::is_same_v<T, PenaltyKind>) {
          if (text == "hann") {
            *p = PenaltyKind::kHann;
          } else if (text == "directional-gaussian" || text == "gaussian") {
            *p = PenaltyKind::kDirectionalGaussian;
          } else {
            throw ConfigError("invalid penalty kind '" + text + "' for " + f.key + " (hann | directional-gaussian)");
          }
        } else {
          *p = detail::parse_number<T>(f.key, text);
        }
      },
      f.ref);
}

inline std::string get_field(const Field& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, PenaltyKind>) {
          return to_string(*p);
        } else if constexpr (std::is_floating_point_v<T>) {
          std::ostringstream os;
          os.precision(17);
          os << *p;
          return os.str();
        } else {
          return std::to_string(*p);
        }
      },
      f.ref);
}

/// Sets `key` (section.name) from text. Unknown keys are rejected.
inline void set_config(AppConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields(c)) {
    if (f.key == key) {
      set_field(f, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config(AppConfig& c, const std::string& key) {
  for (const auto& f : config_fields(c)) {
    if (f.key == key) return get_field(f);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies "section.name=value".
inline void apply_override(AppConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_config(c, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// INI text: [section] headers, "name = value" lines, '#' or ';' comments.
inline void parse_config(AppConfig& c, std::istream& is, const std::string& source = "<config>") {
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected 'name = value'");
    const std::string name = detail::trim(line.substr(0, eq));
    try {
      set_config(c, section.empty() ? name : section + "." + name, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    }
  }
}

inline AppConfig load_config(const std::string& path) {
  AppConfig c;
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  parse_config(c, is, path);
  return c;
}

/// Full config as INI text, every key present.
inline std::string dump_config(AppConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_fields(c)) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << get_field(f) << '\n';
  }
  return os.str();
}

/// Desk-scale preset, mirrored by configs/desk.ini: a 50 m grid at 0.2 m,
/// 16-channel encoder and FGN, slower objects, 2000 steps at lr 1e-3.
inline AppConfig desk_config() {
  AppConfig c;
  c.pillars.grid = {-25.0, 25.0, -25.0, 25.0, 0.2, -3.0, 1.0};
  c.pillars.feature_channels = 16;
  c.fgn.channels = 16;
  c.train.steps = 2000;
  c.train.lr = 1e-3;
  c.scene.speed = {0.5, 1.5};
  return c;
}

/// Names accepted by the hyperparameter sweep: the tracker section.
inline std::vector<std::string> sweep_keys() {
  std::vector<std::string> out;
  for (const auto& k : config_keys()) {
    if (k.rfind("tracker.", 0) == 0) out.push_back(k.substr(8));
  }
  return out;
}

}  // namespace vpit

#endif  // VPIT_CONFIG_HPP
