/*
 * Copyright 2026 The paenet-cpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// paenet command-line tool: dataset generation, training, inference,
// evaluation, projection and gradient checks.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "paenet/io.hpp"
#include "paenet/verify.hpp"

namespace {

using namespace paenet;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Toggles {
  bool no_apm = false, no_qam = false, no_ffm = false, no_psa = false;

  void add_to(CLI::App* cmd) {
    cmd->add_flag("--no-apm", no_apm, "Replace APM with unidirectional max pooling");
    cmd->add_flag("--no-qam", no_qam, "Disable the quadruple attention module");
    cmd->add_flag("--no-ffm", no_ffm, "Disable feature fusion between the paths");
    cmd->add_flag("--no-psa", no_psa, "Disable polarized self-attention in the 2D path");
  }
  void apply(ModuleToggles& t) const {
    if (no_apm) t.apm = false;
    if (no_qam) t.qam = false;
    if (no_ffm) t.ffm = false;
    if (no_psa) t.psa = false;
  }
};

void say(const std::string& line) {
  std::cout << line << '\n' << std::flush;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- gen-data --------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  SplitCounts counts;
  SynthSpec spec;
  std::vector<std::size_t> dims{spec.dims.begin(), spec.dims.end()};
};

int gen_data(GenDataArgs a) {
  std::copy(a.dims.begin(), a.dims.end(), a.spec.dims.begin());
  const auto entries = gen_dataset(a.spec, a.counts, a.out);
  say("wrote " + std::to_string(entries.size()) + " samples to " + a.out);
  return kExitOk;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, checkpoint, resume, log;
  std::optional<std::size_t> iters, batch, checkpoint_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::vector<std::size_t> patch;
  Toggles toggles;
};

int train(const TrainArgs& a) {
  std::vector<TrainSample> data;
  for (auto& s : load_split(a.data, "train")) data.push_back(std::move(s.sample));

  std::optional<Paenet> net;
  TrainConfig cfg;
  TrainState state;
  if (!a.resume.empty()) {
    Checkpoint c = load_checkpoint(a.resume);
    net.emplace(std::move(c.net));
    cfg = c.train;
    state = c.state;
    say("resumed " + a.resume + " at iteration " + std::to_string(state.iteration));
  } else {
    RunConfig run;
    if (!a.config.empty()) run = load_run_config(a.config);
    cfg = run.train;
    if (a.iters) cfg.max_iters = *a.iters;
    if (a.batch) cfg.batch = *a.batch;
    if (a.lr) cfg.lr0 = *a.lr;
    if (a.seed) cfg.seed = *a.seed;
    if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
    if (!a.patch.empty()) cfg.patch = {a.patch[0], a.patch[1], a.patch[2]};
    a.toggles.apply(run.network.toggles);
    net.emplace(run.network);
    state = initial_train_state(cfg);
    say("network " + toggles_label(run.network.toggles) + ", " + std::to_string(net->parameter_count()) +
        " parameters, " + std::to_string(data.size()) + " training samples");
  }

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::app);
    if (!log) throw DataError("cannot open log file " + a.log);
  }
  TrainHooks hooks;
  hooks.on_iteration = [&](const TrainRecord& r) {
    const std::string line = format_log_line(r);
    say(line);
    if (log) log << line << '\n' << std::flush;
  };
  if (!a.checkpoint.empty())
    hooks.on_checkpoint = [&](const TrainState& s) {
      std::string path = a.checkpoint;
      if (const auto at = path.find("{iter}"); at != std::string::npos)
        path.replace(at, 6, std::to_string(s.iteration));
      save_checkpoint(path, *net, cfg, s);
    };
  train_loop(cfg, *net, data, state, hooks);
  save_weights(a.out, *net);
  say("saved " + a.out);
  return kExitOk;
}

// --- infer -----------------------------------------------------------------------

struct InferArgs {
  std::string model, input, data, split = "test", out, mask_out;
  std::vector<std::size_t> patch;
  double threshold = kDefaultThreshold;
};

Dims3 inference_patch(const std::vector<std::size_t>& requested, const Paenet& net, const Shape& volume) {
  if (!requested.empty()) return {requested[0], requested[1], requested[2]};
  const TrainConfig defaults;
  return {std::min(defaults.patch[0], volume[1]), std::min(defaults.patch[1], volume[2]), net.config().input_depth};
}

int infer(const InferArgs& a) {
  if (a.input.empty() == a.data.empty()) throw ContractError("infer: give exactly one of --input or --data");
  const Paenet net = load_weights(a.model);
  if (!a.input.empty()) {
    const VolumeFile v = load_volume(a.input);
    const Tensor<float> prob = infer_volume(net, v.data, inference_patch(a.patch, net, v.data.shape()));
    write_prob_map(a.out, prob);
    if (!a.mask_out.empty()) write_mask(a.mask_out, threshold_map(prob, a.threshold));
    say("wrote " + a.out);
    return kExitOk;
  }
  fs::create_directories(a.out);
  const auto samples = load_split(a.data, a.split);
  for (const auto& s : samples) {
    const Tensor<float> prob =
        infer_volume(net, s.sample.volume, inference_patch(a.patch, net, s.sample.volume.shape()));
    const std::string stem = fs::path(s.entry.volume).stem().string();
    write_prob_map(fs::path(a.out) / (stem + ".pgm"), prob);
  }
  say("wrote " + std::to_string(samples.size()) + " probability maps to " + a.out);
  return kExitOk;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, model, data, split = "test", out, tag;
  std::vector<std::size_t> patch;
  double threshold = kDefaultThreshold;
};

fs::path gt_for(const fs::path& gt_dir, const std::string& stem) {
  const fs::path suffixed = gt_dir / (stem + "_gt.pgm");
  return fs::exists(suffixed) ? suffixed : gt_dir / (stem + ".pgm");
}

EvalSample eval_pair(const fs::path& pred, const fs::path& gt) {
  EvalSample s{read_prob_map(pred), read_mask(gt)};
  if (s.prob.shape() != s.gt.shape())
    throw DataError("prediction " + pred.string() + " is " + to_string(s.prob.shape()) + " but ground truth " +
                    gt.string() + " is " + to_string(s.gt.shape()));
  return s;
}

int eval(const EvalArgs& a) {
  std::vector<EvalSample> samples;
  std::vector<std::string> labels;
  if (!a.model.empty()) {
    if (a.data.empty()) throw ContractError("eval: --model needs --data");
    const Paenet net = load_weights(a.model);
    for (auto& s : load_split(a.data, a.split)) {
      const Dims3 patch = inference_patch(a.patch, net, s.sample.volume.shape());
      samples.push_back({infer_volume(net, s.sample.volume, patch), std::move(s.sample.gt)});
      labels.push_back(fs::path(s.entry.volume).stem().string());
    }
  } else {
    if (a.pred.empty() || a.gt.empty()) throw ContractError("eval: give --pred and --gt, or --model and --data");
    if (fs::is_directory(a.pred)) {
      std::vector<fs::path> preds;
      for (const auto& e : fs::directory_iterator(a.pred))
        if (e.path().extension() == ".pgm") preds.push_back(e.path());
      std::sort(preds.begin(), preds.end());
      for (const auto& p : preds) {
        samples.push_back(eval_pair(p, gt_for(a.gt, p.stem().string())));
        labels.push_back(p.stem().string());
      }
    } else {
      samples.push_back(eval_pair(a.pred, a.gt));
      labels.push_back(fs::path(a.pred).stem().string());
    }
  }
  if (samples.empty()) throw DataError("eval: no predictions found");
  const MetricsReport report = evaluate_dataset(samples, a.threshold);
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    const auto& s = report.summary(static_cast<Metric>(k));
    say(std::string(kMetricNames[k]) + " " + fmt("%.4f", s.stats.mean) + " +- " + fmt("%.4f", s.stats.sd));
  }
  if (!a.out.empty()) write_report(a.out, report, {labels, a.threshold, a.tag});
  return kExitOk;
}

// --- project ---------------------------------------------------------------------

struct ProjectArgs {
  std::string input, channel = "octa", mode = "mean", out;
};

int project(const ProjectArgs& a) {
  const VolumeFile v = load_volume(a.input);
  const auto it = std::find(v.channels.begin(), v.channels.end(), a.channel);
  if (it == v.channels.end()) throw DataError(a.input + " has no channel '" + a.channel + "'");
  const std::size_t c = static_cast<std::size_t>(it - v.channels.begin());
  const Shape& s = v.data.shape();
  const Tensor<float> channel =
      slice_axis(v.data, 0, c, 1).reshaped(Shape{s[1], s[2], s[3]});
  const Tensor<float> map = project_volume(channel, a.mode == "max" ? ProjectionMode::max : ProjectionMode::mean);
  for (float x : map.data())
    if (!(x >= 0.0f && x <= 1.0f)) throw DataError("projection has values outside [0,1]; cannot write an image");
  write_prob_map(a.out, map);
  say("wrote " + a.out);
  return kExitOk;
}

// --- gradcheck -------------------------------------------------------------------

struct GradcheckArgs {
  std::string block = "all";
  GradCheckOptions options;
  bool fault_injection = false;
};

int gradcheck(const GradcheckArgs& a) {
  std::size_t failed = 0;
  double worst = 0.0;
  const auto cases = run_grad_suite(a.block, a.options);
  for (const auto& c : cases) {
    say(c.group + " " + c.name + " max_error=" + fmt("%.3e", c.result.max_error) + " probed=" +
        std::to_string(c.result.probed) + (c.result.passed ? " PASS" : " FAIL"));
    worst = std::max(worst, c.result.max_error);
    failed += c.result.passed ? 0 : 1;
  }
  say(std::to_string(cases.size() - failed) + "/" + std::to_string(cases.size()) + " cases within tol " +
      fmt("%.1e", a.options.tol) + ", worst " + fmt("%.3e", worst));
  int code = failed ? kExitNumeric : kExitOk;
  if (a.fault_injection) {
    const auto r = fault_injection_check(a.options);
    const bool detected = !r.passed;
    say(std::string("fault injection max_error=") + fmt("%.3e", r.max_error) +
        (detected ? " detected (expected)" : " NOT detected"));
    if (!detected) code = kExitNumeric;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAENet: volumetric attention network for 3D-to-2D vessel segmentation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired OCT/OCTA dataset");
  gen->add_option("--out", gd.out, "Dataset directory")->required();
  gen->add_option("--train", gd.counts.train, "Training samples")->capture_default_str();
  gen->add_option("--val", gd.counts.val, "Validation samples")->capture_default_str();
  gen->add_option("--test", gd.counts.test, "Test samples")->capture_default_str();
  gen->add_option("--seed", gd.spec.seed, "Generator seed")->capture_default_str();
  gen->add_option("--dims", gd.dims, "Volume size L W H")->expected(3)->capture_default_str();
  gen->add_option("--vessels", gd.spec.vessels, "Vessels per sample")->capture_default_str();

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a network on the train split of a dataset");
  trn->add_option("--config", tr.config, "JSON run config with optional 'network' and 'train' objects");
  trn->add_option("--data", tr.data, "Dataset directory")->required();
  trn->add_option("--out", tr.out, "Output weight file")->required();
  trn->add_option("--iters", tr.iters, "Override max_iters");
  trn->add_option("--batch", tr.batch, "Override batch size");
  trn->add_option("--lr", tr.lr, "Override initial learning rate");
  trn->add_option("--seed", tr.seed, "Override training seed");
  trn->add_option("--patch", tr.patch, "Override crop size L W H")->expected(3);
  trn->add_option("--checkpoint", tr.checkpoint, "Checkpoint file; \"{iter}\" in the name is replaced by the iteration");
  trn->add_option("--checkpoint-every", tr.checkpoint_every, "Iterations between checkpoints");
  trn->add_option("--resume", tr.resume, "Continue from a checkpoint (its stored configs apply)");
  trn->add_option("--log", tr.log, "Also append log lines to this file");
  tr.toggles.add_to(trn);

  InferArgs in;
  auto* inf = app.add_subcommand("infer", "Predict probability maps for volumes");
  inf->add_option("--model", in.model, "Weight file")->required();
  inf->add_option("--input", in.input, "Single volume file (.rvv)");
  inf->add_option("--data", in.data, "Dataset directory");
  inf->add_option("--split", in.split, "Split to predict with --data")->capture_default_str();
  inf->add_option("--out", in.out, "Output image, or directory with --data")->required();
  inf->add_option("--mask-out", in.mask_out, "Also write the thresholded mask (single volume)");
  inf->add_option("--threshold", in.threshold, "Mask threshold")->capture_default_str();
  inf->add_option("--patch", in.patch, "Patch size L W H")->expected(3);

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Score predictions against ground-truth masks");
  evl->add_option("--pred", ev.pred, "Probability map file or directory");
  evl->add_option("--gt", ev.gt, "Mask file or directory");
  evl->add_option("--model", ev.model, "Weight file; predicts the split given by --data instead of --pred");
  evl->add_option("--data", ev.data, "Dataset directory");
  evl->add_option("--split", ev.split, "Split to evaluate with --model")->capture_default_str();
  evl->add_option("--patch", ev.patch, "Patch size L W H for --model")->expected(3);
  evl->add_option("--threshold", ev.threshold, "Binarization threshold")->capture_default_str();
  evl->add_option("--out", ev.out, "Report file (JSON)");
  evl->add_option("--tag", ev.tag, "Free-form label stored in the report");

  ProjectArgs pr;
  auto* prj = app.add_subcommand("project", "Project one channel of a volume over depth to an image");
  prj->add_option("--input", pr.input, "Volume file (.rvv)")->required();
  prj->add_option("--channel", pr.channel, "Channel name")->capture_default_str();
  prj->add_option("--mode", pr.mode, "mean or max")->check(CLI::IsMember({"mean", "max"}))->capture_default_str();
  prj->add_option("--out", pr.out, "Output image (.pgm)")->required();

  GradcheckArgs gc;
  auto* grd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::vector<std::string> blocks = grad_suite_groups();
  blocks.push_back("all");
  grd->add_option("--block", gc.block, "Group to check")->check(CLI::IsMember(blocks))->capture_default_str();
  grd->add_option("--eps", gc.options.eps, "Central-difference step")->capture_default_str();
  grd->add_option("--tol", gc.options.tol, "Pass tolerance")->capture_default_str();
  grd->add_option("--seed", gc.options.seed, "Input seed")->capture_default_str();
  grd->add_flag("--fault-injection", gc.fault_injection, "Also confirm that a broken derivative is detected");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "paenet: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*gen) return gen_data(gd);
    if (*trn) return train(tr);
    if (*inf) return infer(in);
    if (*evl) return eval(ev);
    if (*prj) return project(pr);
    if (*grd) return gradcheck(gc);
  } catch (const ContractError& e) {
    std::cerr << "paenet: invalid arguments: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "paenet: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "paenet: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "paenet: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitUsage;
}
