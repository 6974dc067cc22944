#include "rehar/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace rehar {

namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e) throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
  return v;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw ConfigError("config: '" + key + "' has an empty list element");
    out.push_back(parse_number<std::size_t>(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("config: '" + key + "' must be a non-empty list");
  return out;
}

struct Field {
  const char* section;
  const char* key;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& qualified, const std::string&)> set;
};

#define REHAR_SIZE(sec, name, member, doc)                                                          \
  Field {                                                                                           \
    sec, name, doc, [](const RunConfig& c) { return std::to_string(c.member); },                    \
        [](RunConfig& c, const std::string& k, const std::string& v) {                             \
          c.member = parse_number<std::size_t>(k, v);                                               \
        }                                                                                           \
  }
#define REHAR_U64(sec, name, member, doc)                                                           \
  Field {                                                                                           \
    sec, name, doc, [](const RunConfig& c) { return std::to_string(c.member); },                    \
        [](RunConfig& c, const std::string& k, const std::string& v) {                             \
          c.member = parse_number<std::uint64_t>(k, v);                                             \
        }                                                                                           \
  }
#define REHAR_DOUBLE(sec, name, member, doc)                                                        \
  Field {                                                                                           \
    sec, name, doc, [](const RunConfig& c) { return format_double(c.member); },                     \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_number<double>(k, v); } \
  }
#define REHAR_LIST(sec, name, member, doc)                                                          \
  Field {                                                                                           \
    sec, name, doc, [](const RunConfig& c) { return format_list(c.member); },                       \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_list(k, v); } \
  }
#define REHAR_STRING(sec, name, member, doc)                                                        \
  Field {                                                                                           \
    sec, name, doc, [](const RunConfig& c) { return c.member; },                                    \
        [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; }               \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      REHAR_SIZE("model", "num_categories", model.num_categories, "number of activity categories"),
      REHAR_SIZE("model", "time_step", model.time_step, "frame/flow pairs per clip seen by LSTM2"),
      REHAR_SIZE("model", "lstm_units", model.lstm_units, "hidden units of both LSTMs"),
      Field{"model", "fusion", "lstm | sum (ablation: element-wise sum + projection)",
            [](const RunConfig& c) { return std::string(fusion_name(c.model.fusion)); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.fusion = parse_fusion(v); }},
      REHAR_SIZE("backbone", "input_size", model.backbone.input_size, "square network input side in pixels"),
      REHAR_LIST("backbone", "stage_channels", model.backbone.stage_channels, "output channels per stage"),
      REHAR_LIST("backbone", "convs_per_stage", model.backbone.convs_per_stage,
                 "3x3 convolutions per stage (one value or one per stage)"),
      REHAR_DOUBLE("training", "lambda", training.lambda_weight, "weight of the clip-level loss"),
      REHAR_DOUBLE("training", "rmsprop_lr", training.rmsprop_lr, "learning rate of the first phase"),
      REHAR_DOUBLE("training", "sgd_lr", training.sgd_lr, "learning rate after the switch"),
      REHAR_DOUBLE("training", "fuzz", training.fuzz, "rmsprop denominator epsilon"),
      REHAR_DOUBLE("training", "decay_rho", training.decay_rho, "rmsprop accumulator decay"),
      REHAR_SIZE("training", "batch_size", training.batch_size, "clips per update"),
      REHAR_SIZE("training", "max_epochs", training.max_epochs, "epoch budget"),
      REHAR_SIZE("training", "switch_patience", training.switch_patience,
                 "stalled epochs before rmsprop -> sgd"),
      REHAR_DOUBLE("training", "switch_threshold", training.switch_threshold,
                   "relative improvement of the smoothed loss counted as progress"),
      REHAR_DOUBLE("training", "ema_beta", training.ema_beta, "smoothing factor of the epoch loss"),
      REHAR_U64("training", "seed", training.seed, "initialization and shuffling seed"),
      REHAR_SIZE("training", "threads", training.threads, "worker threads (results do not depend on it)"),
      REHAR_DOUBLE("flow", "alpha", flow.alpha, "smoothness weight on the 0..255 intensity scale"),
      REHAR_SIZE("flow", "iterations", flow.iterations, "Jacobi sweeps per warp"),
      REHAR_SIZE("flow", "pyramid_levels", flow.pyramid_levels, "coarse-to-fine levels"),
      REHAR_SIZE("flow", "warps_per_level", flow.warps_per_level, "re-warps per level"),
      REHAR_SIZE("synth", "num_motion_categories", synth.num_motion_categories, "categories told apart by motion"),
      REHAR_SIZE("synth", "num_appearance_categories", synth.num_appearance_categories,
                 "categories told apart by color"),
      REHAR_SIZE("synth", "train_per_category", synth.train_per_category, "training clips per category"),
      REHAR_SIZE("synth", "test_per_category", synth.test_per_category, "test clips per category"),
      REHAR_SIZE("synth", "frame_size", synth.frame_size, "frame side in pixels"),
      REHAR_SIZE("synth", "frames_per_clip", synth.frames_per_clip, "frames per generated clip"),
      REHAR_DOUBLE("synth", "noise_std", synth.noise_std, "gaussian pixel noise (intensities in 0..1)"),
      REHAR_U64("synth", "seed", synth.seed, "dataset seed"),
      REHAR_STRING("paths", "data_dir", paths.data_dir, "dataset directory"),
      REHAR_STRING("paths", "checkpoint", paths.checkpoint, "checkpoint file"),
      REHAR_STRING("paths", "output_dir", paths.output_dir, "evaluation / saliency output directory"),
  };
  return table;
}

#undef REHAR_SIZE
#undef REHAR_U64
#undef REHAR_DOUBLE
#undef REHAR_LIST
#undef REHAR_STRING

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  training.validate();
  flow.validate();
  synth.validate();
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(source + ": key '" + section + "' must appear inside a [section]");
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (!f) throw ConfigError(source + ": unknown key '" + section + "." + key + "'");
      f->set(c, section + "." + key, value.data());
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_run_config(in, path.string());
}

std::string serialize_run_config(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

std::string run_config_reference() {
  const RunConfig defaults;
  std::ostringstream out;
  out << "# rehar run configuration. Every key is optional; unknown keys are errors.\n";
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << "# " << f.doc << '\n' << f.key << " = " << f.get(defaults) << '\n';
  }
  return out.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) { return serialize_run_config(a) == serialize_run_config(b); }

}  // namespace rehar
