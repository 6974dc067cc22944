#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rehar/checkpoint.hpp"
#include "rehar/config.hpp"
#include "rehar/data.hpp"
#include "rehar/evaluation.hpp"
#include "rehar/optical_flow.hpp"
#include "rehar/training.hpp"

namespace fs = std::filesystem;
using namespace rehar;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::string clip;
  std::size_t category = 0;
  std::string split;
  std::vector<std::string> flow_files;
};

RunConfig load_config(const Options& o) { return o.config.empty() ? RunConfig{} : load_run_config(o.config); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::vector<VideoClip> load_split(const fs::path& manifest, const std::string& split) {
  std::vector<VideoClip> clips;
  for (const auto& e : read_manifest(manifest))
    if (e.split == split) clips.push_back(load_clip_ppm_sequence(e.clip_dir));
  if (clips.empty()) throw DataError("manifest " + manifest.string() + " has no '" + split + "' clips");
  return clips;
}

void check_labels(const std::vector<VideoClip>& clips, std::size_t num_categories) {
  for (const auto& c : clips)
    if (c.label >= num_categories)
      throw DataError("clip '" + c.id + "' has label " + std::to_string(c.label) + " but the model has " +
                      std::to_string(num_categories) + " categories");
}

int cmd_config() {
  std::cout << run_config_reference();
  return 0;
}

int cmd_synth(const Options& o) {
  RunConfig cfg = load_config(o);
  if (o.seed) cfg.synth.seed = *o.seed;
  const fs::path out = o.out.empty() ? fs::path(cfg.paths.data_dir) : fs::path(o.out);
  const SyntheticDataset ds = generate_synthetic_dataset(cfg.synth);
  const fs::path manifest = write_dataset(out, ds);
  std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test clips ("
            << cfg.synth.num_categories() << " categories) to " << out.string() << "\nmanifest: " << manifest.string()
            << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig cfg = load_config(o);
  if (o.seed) cfg.training.seed = *o.seed;
  cfg.training.threads = o.threads;
  const fs::path manifest = o.manifest.empty() ? fs::path(cfg.paths.data_dir) / "manifest.tsv" : fs::path(o.manifest);
  const fs::path ckpt = o.out.empty() ? fs::path(cfg.paths.checkpoint) : fs::path(o.out);

  const auto clips = load_split(manifest, o.split.empty() ? "train" : o.split);
  check_labels(clips, cfg.model.num_categories);
  std::vector<TrainingSample> samples;
  for (const auto& c : clips) samples.push_back({prepare_clip(c, cfg.model, cfg.flow), c.label, c.id});
  std::cout << "training on " << samples.size() << " clips\n";

  ReHARModel model = ReHARModel::create(cfg.model, cfg.training.seed);
  const TrainingHistory history = train(model, samples, cfg.training, [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " [" << optimizer_name(e.phase) << "] loss " << std::setprecision(6)
              << e.total_loss << " acc " << e.accuracy << std::endl;
  });
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, model, cfg);
  auto hist = open_out(ckpt.string() + ".history.tsv");
  write_history(hist, history);
  std::cout << "checkpoint: " << ckpt.string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const Checkpoint ck = load_checkpoint(fs::path(o.checkpoint));
  const fs::path manifest = o.manifest.empty() ? fs::path(ck.config.paths.data_dir) / "manifest.tsv" : fs::path(o.manifest);
  const fs::path out = o.out.empty() ? fs::path(ck.config.paths.output_dir) : fs::path(o.out);
  const auto clips = load_split(manifest, o.split.empty() ? "test" : o.split);
  check_labels(clips, ck.model.config.num_categories);

  std::vector<ClipTensors> inputs;
  for (const auto& c : clips) inputs.push_back(prepare_clip(c, ck.model.config, ck.config.flow));
  std::vector<EvalSample> samples;
  for (std::size_t i = 0; i < clips.size(); ++i) samples.push_back({&inputs[i], clips[i].label});
  const EvaluationReport report = evaluate(ck.model, samples, {}, o.threads);

  std::vector<std::string> names;
  if (ck.config.synth.num_categories() == ck.model.config.num_categories)
    names = category_names(ck.config.synth);
  else
    for (std::size_t c = 0; c < ck.model.config.num_categories; ++c) names.push_back("category_" + std::to_string(c));

  fs::create_directories(out);
  {
    auto f = open_out(out / "ap.tsv");
    write_ap_table(f, report.map, names);
    auto g = open_out(out / "confusion.tsv");
    write_confusion_matrix(g, report.confusion);
  }
  write_ap_table(std::cout, report.map, names);
  std::cout << "accuracy\t" << std::fixed << std::setprecision(4) << report.accuracy << "\n\n";
  write_confusion_matrix(std::cout, report.confusion);
  return 0;
}

int cmd_flow(const Options& o) {
  const RunConfig cfg = load_config(o);
  const RgbImage prev = read_ppm(fs::path(o.flow_files[0]));
  const RgbImage curr = read_ppm(fs::path(o.flow_files[1]));
  if (prev.width != curr.width || prev.height != curr.height)
    throw DataError("flow: frames differ in size (" + std::to_string(prev.width) + "x" + std::to_string(prev.height) +
                    " vs " + std::to_string(curr.width) + "x" + std::to_string(curr.height) + ")");
  const FlowField flow = estimate_flow(to_gray(prev), to_gray(curr), cfg.flow);
  write_flo(fs::path(o.flow_files[2]), flow);
  write_ppm(fs::path(o.flow_files[3]), flow_to_color(flow));
  return 0;
}

int cmd_saliency(const Options& o) {
  const Checkpoint ck = load_checkpoint(fs::path(o.checkpoint));
  if (o.category >= ck.model.config.num_categories)
    throw ConfigError("saliency: category " + std::to_string(o.category) + " outside [0, " +
                      std::to_string(ck.model.config.num_categories) + ")");
  const VideoClip clip = load_clip_ppm_sequence(o.clip);
  const std::size_t side = ck.model.config.backbone.input_size;
  const auto pairs = preprocess_clip(clip, ck.model.config.time_step + 1, side, side, ck.config.flow);
  const SaliencyResult sal = input_saliency(ck.model, to_clip_tensors(pairs), o.category);
  const fs::path out = o.out.empty() ? fs::path(ck.config.paths.output_dir) : fs::path(o.out);
  fs::create_directories(out);
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%02zu", t);
    write_ppm(out / ("frame_" + std::string(stem) + ".ppm"), pairs[t].frame);
    write_ppm(out / ("flow_" + std::string(stem) + ".ppm"), pairs[t].flow);
    const auto& fm = sal.frame_maps[t];
    const auto& om = sal.flow_maps[t];
    write_pgm(out / ("frame_" + std::string(stem) + "_saliency.pgm"), fm.width, fm.height, saliency_to_gray(fm));
    write_pgm(out / ("flow_" + std::string(stem) + "_saliency.pgm"), om.width, om.height, saliency_to_gray(om));
  }
  std::cout << "wrote " << 2 * pairs.size() << " saliency maps to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rehar: two-stream activity recognition on synthetic video"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration file (see `rehar config`)");
    sub->add_option("--threads", o.threads, "worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
  };

  auto* config = app.add_subcommand("config", "print the documented configuration reference");

  auto* synth = app.add_subcommand("synth", "write the synthetic dataset and its manifest");
  add_common(synth);
  synth->add_option("--seed", o.seed, "dataset seed (overrides synth.seed)");
  synth->add_option("--out", o.out, "output directory (default paths.data_dir)");

  auto* trn = app.add_subcommand("train", "train a model and write a checkpoint plus history");
  add_common(trn);
  trn->add_option("--seed", o.seed, "training seed (overrides training.seed)");
  trn->add_option("--manifest", o.manifest, "dataset manifest (default <paths.data_dir>/manifest.tsv)");
  trn->add_option("--split", o.split, "split tag to train on (default train)");
  trn->add_option("--out", o.out, "checkpoint path (default paths.checkpoint)");

  auto* ev = app.add_subcommand("eval", "per-category AP, mAP and confusion matrix");
  add_common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  ev->add_option("--manifest", o.manifest, "dataset manifest");
  ev->add_option("--split", o.split, "split tag to evaluate (default test)");
  ev->add_option("--out", o.out, "directory for ap.tsv and confusion.tsv");

  auto* flow = app.add_subcommand("flow", "estimate flow between two P6 frames");
  add_common(flow);
  flow->add_option("files", o.flow_files, "prev.ppm curr.ppm out.flo out.ppm")->required()->expected(4);

  auto* sal = app.add_subcommand("saliency", "input-gradient saliency maps for one clip");
  add_common(sal);
  sal->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  sal->add_option("--clip", o.clip, "clip directory")->required();
  sal->add_option("--category", o.category, "category whose score is differentiated")->required();
  sal->add_option("--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*config) return cmd_config();
    if (*synth) return cmd_synth(o);
    if (*trn) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*flow) return cmd_flow(o);
    if (*sal) return cmd_saliency(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
