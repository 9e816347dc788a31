#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csn/analyzer.hpp"
#include "csn/dataflow.hpp"
#include "csn/gradcheck.hpp"
#include "csn/trainer.hpp"
#include "csn/viz.hpp"
#include "json.hpp"

namespace {

using namespace csn;
using nlohmann::ordered_json;

constexpr int kOk = 0;
constexpr int kUsage = 1;         // bad flags, unknown names, malformed inputs
constexpr int kCheckFailed = 2;   // tolerance or gradient check failure

// JSON config files: top-level keys set main options, nested objects set the
// options of the subcommand they are named after. Command-line flags win.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool, bool, std::string) const override {
    ordered_json j = ordered_json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (!opt->get_configurable() || opt->results().empty()) continue;
      j[opt->get_single_name()] = opt->results().back();
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    ordered_json j;
    try {
      j = ordered_json::parse(in);
    } catch (const std::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid json: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    walk(j, {}, items);
    return items;
  }

 private:
  static void walk(const ordered_json& j, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& items) {
    if (!j.is_object()) throw CLI::ConfigError("config sections must be json objects");
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto deeper = parents;
        deeper.push_back(key);
        walk(value, std::move(deeper), items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const ordered_json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }
};

Dims3 parse_dims(const std::string& text, const char* what) {
  Dims3 d{};
  char tail = 0;
  if (std::sscanf(text.c_str(), "%lldx%lldx%lld%c", reinterpret_cast<long long*>(&d[0]),
                  reinterpret_cast<long long*>(&d[1]), reinterpret_cast<long long*>(&d[2]),
                  &tail) != 3 || d[0] <= 0 || d[1] <= 0 || d[2] <= 0)
    throw std::invalid_argument(std::string(what) + " must look like 8x224x224, got " + text);
  return d;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("cannot write " + path);
}

// stdout unless an explicit path was given
void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_text(out_path, text);
}

std::int64_t infer_classes(const std::vector<VideoClip>& dataset) {
  std::int64_t top = 0;
  for (const VideoClip& v : dataset) top = std::max(top, v.label);
  return top + 1;
}

Model load_model(const std::string& arch, std::int64_t classes, std::uint64_t seed,
                 const std::string& checkpoint) {
  ArchSpec spec = named_arch(arch);
  if (classes > 0) spec.num_classes = classes;
  Model model = build_arch(spec, seed);
  if (!checkpoint.empty()) load_into_model(model, load_checkpoint(checkpoint));
  return model;
}

// Fixed desk-scale recipe behind `sweep --train`: the variant learns the
// default synthetic task at clip size 3x4x32x32 and reports held-out video@1.
double train_variant_accuracy(ArchSpec arch, std::uint64_t seed) {
  arch.num_classes = 4;
  SynthTaskSpec task = default_task(seed);
  task.clips_per_class = 40;
  const auto [train_set, eval_set] = split_dataset(gen_dataset(task), 0.2);

  Model model = build_arch(arch, seed);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.warmup_epochs = 2;
  cfg.total_epochs = 12;
  cfg.eval_every = 100;
  cfg.early_stop_video_acc = 0.95;
  const RunHistory hist = train(model, train_set, eval_set, SampleSpec{}, cfg);
  return hist.evals.empty() ? 0.0 : hist.evals.back().video_top1;
}

struct AnalyzeArgs {
  std::string arch, input = "8x224x224", check, out;
  std::int64_t classes = 400;
  bool csv = false, flops_input_voxels = false, count_bn = false;
};

int run_analyze(const AnalyzeArgs& a) {
  const Dims3 thw = parse_dims(a.input, "--input");
  const Shape5 input{1, 3, thw[0], thw[1], thw[2]};

  if (!a.check.empty()) {
    if (a.check != "table2")
      throw std::invalid_argument("unknown check: " + a.check + " (expected table2)");
    const std::vector<Table2Check> checks = check_table2(input, a.classes);
    bool ok = true;
    std::string text;
    char line[160];
    for (const Table2Check& c : checks) {
      std::snprintf(line, sizeof(line),
                    "%-14s flops %+6.2f%%  params %+6.2f%%  interactions %+6.2f%%  %s\n",
                    c.arch.c_str(), 100.0 * c.flops_err, 100.0 * c.params_err,
                    100.0 * c.interactions_err, c.pass ? "pass" : "FAIL");
      text += line;
      ok = ok && c.pass;
    }
    text += ok ? "all rows within tolerance\n" : "tolerance check failed\n";
    emit(text, a.out);
    return ok ? kOk : kCheckFailed;
  }

  if (a.arch.empty()) throw std::invalid_argument("analyze needs --arch or --check table2");
  ArchSpec spec = named_arch(a.arch);
  spec.num_classes = a.classes;
  Conventions conventions;
  conventions.flops_use_input_voxels = a.flops_input_voxels;
  conventions.count_bn_params = a.count_bn;
  const ModelReport report = model_report(spec, input, conventions);
  emit(a.csv ? report_csv(report) : report_json(report), a.out);
  return kOk;
}

struct SweepArgs {
  std::string arch, axis, input = "8x224x224", out;
  bool train = false;
  std::uint64_t seed = 0;
};

int run_sweep(const SweepArgs& a) {
  const Dims3 thw = parse_dims(a.input, "--input");
  const SweepResult sweep = sweep_stats(named_arch(a.arch), a.axis,
                                        {1, 3, thw[0], thw[1], thw[2]});
  for (const std::string& w : sweep.warnings) std::fprintf(stderr, "%s\n", w.c_str());

  std::string csv;
  if (a.train) {
    std::ostringstream os;
    os << "variant,groups,params,flops,interactions,video_top1\n";
    for (const SweepRow& row : sweep.rows) {
      std::fprintf(stderr, "training %s\n", row.variant.c_str());
      const double acc = train_variant_accuracy(row.arch, a.seed);
      os << row.variant << "," << row.group << "," << row.params << "," << row.flops << ","
         << row.interactions << "," << acc << "\n";
    }
    csv = os.str();
  } else {
    csv = sweep_csv(sweep);
  }
  emit(csv, a.out);
  return kOk;
}

int cmd_gradcheck(const std::string& scope) {
  const std::vector<GradCheckRow> rows = run_gradcheck(scope);
  std::fputs(gradcheck_table(rows).c_str(), stdout);
  if (all_pass(rows)) {
    std::printf("gradcheck %s: %zu checks passed\n", scope.c_str(), rows.size());
    return kOk;
  }
  std::printf("gradcheck %s: failures above tolerance\n", scope.c_str());
  return kCheckFailed;
}

struct TrainArgs {
  std::string arch, data, history_csv, history_json;
  double eval_fraction = 0.2;
  std::int64_t classes = 0;  // 0 = infer from the dataset labels
  SampleSpec sample;
  TrainConfig cfg;
};

int run_train(const TrainArgs& a) {
  const std::vector<VideoClip> dataset = load_dataset(a.data);
  const auto [train_set, eval_set] = split_dataset(dataset, a.eval_fraction);
  const std::int64_t classes = a.classes > 0 ? a.classes : infer_classes(dataset);

  Model model = load_model(a.arch, classes, a.cfg.seed, "");
  const RunHistory hist = train(model, train_set, eval_set, a.sample, a.cfg);
  if (!a.history_csv.empty()) write_text(a.history_csv, hist.csv());
  if (!a.history_json.empty()) write_text(a.history_json, hist.json());

  ordered_json summary;
  summary["iterations"] = hist.rows.size();
  summary["final_loss"] = hist.rows.empty() ? 0.0 : hist.rows.back().loss;
  if (!hist.evals.empty()) {
    summary["clip_top1"] = hist.evals.back().clip_top1;
    summary["video_top1"] = hist.evals.back().video_top1;
  }
  std::fputs((summary.dump(2) + "\n").c_str(), stdout);
  return kOk;
}

struct EvalArgs {
  std::string arch, checkpoint, data, out;
  std::int64_t classes = 0, clips = 10;
  std::uint64_t seed = 0;
  SampleSpec sample;
};

int run_eval(const EvalArgs& a) {
  const std::vector<VideoClip> dataset = load_dataset(a.data);
  const std::int64_t classes = a.classes > 0 ? a.classes : infer_classes(dataset);
  const Model model = load_model(a.arch, classes, a.seed, a.checkpoint);
  const EvalResult r = evaluate(model, dataset, a.sample, a.clips);

  ordered_json j;
  j["videos"] = dataset.size();
  j["clips_per_video"] = a.clips;
  j["clip_top1"] = r.clip_top1;
  j["video_top1"] = r.video_top1;
  emit(j.dump(2) + "\n", a.out);
  return kOk;
}

struct GenDataArgs {
  std::string out, size = "16x64x64";
  SynthTaskSpec task;
};

int run_gendata(const GenDataArgs& a) {
  SynthTaskSpec task = default_task(a.task.seed);
  task.num_classes = a.task.num_classes;
  task.clips_per_class = a.task.clips_per_class;
  task.noise = a.task.noise;
  const Dims3 thw = parse_dims(a.size, "--size");
  task.full_t = thw[0];
  task.full_h = thw[1];
  task.full_w = thw[2];
  if (task.num_classes != 4) {
    // beyond the default four directions, cycle the compass and step the speed
    const MotionParams compass[] = {{0, 1}, {0, -1}, {1, 0}, {-1, 0},
                                    {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
    task.motions.clear();
    for (std::int64_t k = 0; k < task.num_classes; ++k) {
      MotionParams m = compass[k % 8];
      m.speed = 3.0 + 2.0 * static_cast<double>(k / 8);
      task.motions.push_back(m);
    }
  }
  write_dataset(a.out, gen_dataset(task), task);
  std::printf("wrote %lld clips to %s\n",
              static_cast<long long>(task.num_classes * task.clips_per_class),
              a.out.c_str());
  return kOk;
}

struct VizArgs {
  std::string arch, checkpoint, layer, out_dir;
  std::uint64_t seed = 0;
};

int run_viz(const VizArgs& a) {
  const Model model = load_model(a.arch, 0, a.seed, a.checkpoint);
  const std::string path = viz_filters(model, a.layer, a.out_dir);
  std::printf("%s\n", path.c_str());
  return kOk;
}

void add_sample_flags(CLI::App* cmd, SampleSpec& s) {
  cmd->add_option("--clip-len", s.clip_len, "frames per sampled clip");
  cmd->add_option("--skip", s.skip, "sampling stride between frames");
  cmd->add_option("--scale-min", s.s_min, "short-edge scale lower bound");
  cmd->add_option("--scale-max", s.s_max, "short-edge scale upper bound");
  cmd->add_option("--crop", s.crop, "square crop size");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"channel-separated 3d convnet toolkit"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "json file with per-command option sections");

  int rc = kOk;

  AnalyzeArgs analyze;
  CLI::App* c_analyze =
      app.add_subcommand("analyze", "report per-layer params, flops and interactions")
          ->configurable();
  c_analyze->add_option("--arch", analyze.arch, "architecture name");
  c_analyze->add_option("--input", analyze.input, "clip shape TxHxW (default 8x224x224)");
  c_analyze->add_option("--classes", analyze.classes, "classifier width (default 400)");
  c_analyze->add_option("--check", analyze.check, "compare against reference totals: table2");
  c_analyze->add_flag("--csv", analyze.csv, "emit the per-layer table as csv");
  c_analyze->add_flag("--flops-input-voxels", analyze.flops_input_voxels,
                      "count flops against input voxels instead of output voxels");
  c_analyze->add_flag("--count-bn", analyze.count_bn,
                      "fold batch norm scale/shift into the parameter total");
  c_analyze->add_option("--out", analyze.out, "write the report here instead of stdout");
  c_analyze->callback([&] { rc = run_analyze(analyze); });

  SweepArgs sweep;
  CLI::App* c_sweep =
      app.add_subcommand("sweep", "grouping-variant table for a base architecture")
          ->configurable();
  c_sweep->add_option("--arch", sweep.arch, "base architecture")->required();
  c_sweep->add_option("--axis", sweep.axis, "groups-3x3x3, groups-1x1x1 or block-kind")
      ->required();
  c_sweep->add_option("--input", sweep.input, "clip shape TxHxW");
  c_sweep->add_flag("--train", sweep.train,
                    "also train each variant on the synthetic task (slow)");
  c_sweep->add_option("--seed", sweep.seed, "seed for the --train runs");
  c_sweep->add_option("--out", sweep.out, "write the csv here instead of stdout");
  c_sweep->callback([&] { rc = run_sweep(sweep); });

  std::string scope;
  CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient checks")
                         ->configurable();
  c_grad->add_option("scope", scope, "layers, blocks or tiny-model")->required();
  c_grad->callback([&] { rc = cmd_gradcheck(scope); });

  TrainArgs tr;
  CLI::App* c_train =
      app.add_subcommand("train", "train a model on a generated dataset")->configurable();
  c_train->add_option("--arch", tr.arch, "architecture name")->required();
  c_train->add_option("--data", tr.data, "dataset directory from gendata")->required();
  c_train->add_option("--classes", tr.classes, "classifier width (default: from labels)");
  c_train->add_option("--eval-fraction", tr.eval_fraction, "held-out share per class");
  c_train->add_option("--lr", tr.cfg.base_lr, "peak learning rate");
  c_train->add_option("--warmup-epochs", tr.cfg.warmup_epochs, "linear warmup epochs");
  c_train->add_option("--epochs", tr.cfg.total_epochs, "total epochs");
  c_train->add_option("--iters-per-epoch", tr.cfg.iters_per_epoch, "iterations per epoch");
  c_train->add_option("--momentum", tr.cfg.momentum, "sgd momentum");
  c_train->add_option("--weight-decay", tr.cfg.weight_decay, "l2 coefficient");
  c_train->add_option("--batch", tr.cfg.batch_size, "clips per iteration");
  c_train->add_option("--seed", tr.cfg.seed, "run seed (init, sampling, augmentation)");
  c_train->add_option("--eval-every", tr.cfg.eval_every, "evaluate every n iterations");
  c_train->add_option("--eval-clips", tr.cfg.eval_clips, "clips averaged per eval video");
  c_train->add_option("--early-stop", tr.cfg.early_stop_video_acc,
                      "stop once eval video@1 reaches this");
  c_train->add_option("--ckpt-dir", tr.cfg.checkpoint_dir, "checkpoint directory");
  c_train->add_option("--ckpt-every", tr.cfg.checkpoint_every,
                      "checkpoint every n iterations");
  c_train->add_option("--history-csv", tr.history_csv, "write per-iteration history csv");
  c_train->add_option("--history-json", tr.history_json, "write history json");
  add_sample_flags(c_train, tr.sample);
  c_train->callback([&] { rc = run_train(tr); });

  EvalArgs ev;
  CLI::App* c_eval =
      app.add_subcommand("eval", "clip@1 / video@1 of a checkpoint on a dataset")
          ->configurable();
  c_eval->add_option("--arch", ev.arch, "architecture name")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "weights to load")->required();
  c_eval->add_option("--data", ev.data, "dataset directory")->required();
  c_eval->add_option("--classes", ev.classes, "classifier width (default: from labels)");
  c_eval->add_option("--clips", ev.clips, "clips averaged per video");
  c_eval->add_option("--seed", ev.seed, "model init seed (the checkpoint then overwrites)");
  c_eval->add_option("--out", ev.out, "write the result json here instead of stdout");
  add_sample_flags(c_eval, ev.sample);
  c_eval->callback([&] { rc = run_eval(ev); });

  GenDataArgs gen;
  CLI::App* c_gen =
      app.add_subcommand("gendata", "write a synthetic motion dataset")->configurable();
  c_gen->add_option("--out", gen.out, "dataset directory to create")->required();
  c_gen->add_option("--seed", gen.task.seed, "generator seed");
  c_gen->add_option("--classes", gen.task.num_classes, "number of motion classes");
  c_gen->add_option("--clips-per-class", gen.task.clips_per_class, "clips per class");
  c_gen->add_option("--size", gen.size, "full video extent TxHxW");
  c_gen->add_option("--noise", gen.task.noise, "uniform pixel noise amplitude");
  c_gen->callback([&] { rc = run_gendata(gen); });

  VizArgs viz;
  CLI::App* c_viz =
      app.add_subcommand("viz-filters", "render conv1 or channelwise filter grids")
          ->configurable();
  c_viz->add_option("--arch", viz.arch, "architecture name")->required();
  c_viz->add_option("--checkpoint", viz.checkpoint, "weights to render (default: init)");
  c_viz->add_option("--layer", viz.layer, "conv1, a unit like conv3_1.b, or comp_k")
      ->required();
  c_viz->add_option("--out-dir", viz.out_dir, "directory for the image files")->required();
  c_viz->add_option("--seed", viz.seed, "init seed when no checkpoint is given");
  c_viz->callback([&] { rc = run_viz(viz); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return rc;
}
