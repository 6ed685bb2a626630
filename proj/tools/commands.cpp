/*
 * styleseg: MRI glioma segmentation with style-transfer augmentation
 *
 * Copyright 2026 styleseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "styleseg/checkpoint.hpp"
#include "styleseg/common.hpp"
#include "styleseg/descriptor.hpp"
#include "styleseg/featurenet.hpp"
#include "styleseg/metrics.hpp"
#include "styleseg/nifti.hpp"
#include "styleseg/nst.hpp"
#include "styleseg/phantom.hpp"
#include "styleseg/pipeline.hpp"
#include "styleseg/preprocess.hpp"
#include "styleseg/stats.hpp"
#include "styleseg/unet.hpp"

namespace fs = std::filesystem;

namespace styleseg::cli {

namespace {

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw DataError("write failed for " + path);
}

// Case-level worker pool; fn(i) must touch only slot i of any shared output.
void run_indexed(int jobs, int64_t n, const std::function<void(int64_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int64_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<CaseVolume> load_all(const DatasetDescriptor& d) {
  std::vector<CaseVolume> out;
  out.reserve(d.cases.size());
  for (const auto& e : d.cases) out.push_back(load_case(d, e));
  return out;
}

nn::UNetConfig config_by_name(const std::string& name, uint64_t seed) {
  if (name == "desk2d") return nn::UNetConfig::desk_2d(seed);
  if (name == "desk3d") return nn::UNetConfig::desk_3d(seed);
  if (name == "full3d") return nn::UNetConfig::full_3d(seed);
  throw UsageError("unknown model config: " + name);
}

// jittered_spec draws geometry for a 64-cube; scaling everything by the same
// factor preserves its containment guarantees exactly.
PhantomSpec scaled_spec(const std::string& id, uint64_t seed, int64_t size) {
  PhantomSpec s = jittered_spec(id, seed);
  const double f = static_cast<double>(size) / 64.0;
  s.dims = {size, size, size};
  for (int a = 0; a < 3; ++a) {
    s.brain_center[a] *= f;
    s.brain_axes[a] *= f;
    s.tumor_center[a] *= f;
  }
  s.ncr_radius *= f;
  s.tc_radius *= f;
  s.ed_radius *= f;
  s.validate();
  return s;
}

void finish_log(CommandOutcome& outcome, const std::string& dir,
                const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  const std::string path = (fs::path(dir) / "log.txt").string();
  write_text(path, text);
  outcome.log_path = path;
}

std::string fold_record_csv(const std::vector<std::pair<int, EpochRecord>>& rows) {
  std::string out = "fold,epoch,lr,train_loss,val_loss,pseudo_dice,seconds\n";
  char line[256];
  for (const auto& [fold, r] : rows) {
    std::snprintf(line, sizeof(line), "%d,%lld,%.10g,%.10g,%.10g,%.10g,%.3f\n",
                  fold, static_cast<long long>(r.epoch), r.lr, r.train_loss,
                  r.val_loss, r.pseudo_dice, r.wall_seconds);
    out += line;
  }
  return out;
}

struct TrainIo {
  std::string data, val, out;
  uint64_t seed = 0;
  int64_t epochs = 0;
  int64_t batches = 50;
  int64_t val_batches = 10;
  double oversample = 0.5;
  double lr = 0.01;
  std::string config = "desk2d";
  bool wall_clock = false;
  std::string resume;  // train only
  std::string from;    // finetune only
};

void add_loop_options(CLI::App* sc, TrainIo& o) {
  sc->add_option("--data", o.data, "training dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--val", o.val, "validation dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--out", o.out, "output directory")->required();
  sc->add_option("--epochs", o.epochs, "epochs to train")
      ->required()
      ->check(CLI::PositiveNumber);
  sc->add_option("--batches", o.batches, "train batches per epoch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sc->add_option("--val-batches", o.val_batches, "validation batches per epoch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sc->add_option("--oversample", o.oversample,
                 "chance a patch centers on tumor")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sc->add_flag("--wall-clock", o.wall_clock,
               "record epoch seconds (breaks byte reproducibility)");
}

TrainOptions loop_options(const TrainIo& o) {
  TrainOptions opt;
  opt.epochs = o.epochs;
  opt.batches_per_epoch = o.batches;
  opt.val_batches_per_epoch = o.val_batches;
  opt.oversample_foreground = o.oversample;
  opt.wall_clock = o.wall_clock;
  return opt;
}

// Writes records.csv/best.ckpt/latest.ckpt; on resume the new records extend
// the existing CSV and an existing strictly better best checkpoint survives.
void emit_train_outputs(const TrainResult& result, const std::string& out,
                        bool merge, CommandOutcome& outcome,
                        std::vector<std::string>& log) {
  fs::create_directories(out);
  const std::string records_path = (fs::path(out) / "records.csv").string();
  std::vector<EpochRecord> records;
  if (merge && fs::exists(records_path))
    records = parse_epoch_records_csv(read_text(records_path));
  records.insert(records.end(), result.records.begin(), result.records.end());
  write_text(records_path, epoch_records_csv(records));

  const std::string best_path = (fs::path(out) / "best.ckpt").string();
  const nn::Model* best = &result.best;
  nn::Model prev;
  if (merge && fs::exists(best_path)) {
    prev = load_checkpoint(best_path);
    if (prev.pseudo_ema >= best->pseudo_ema) best = &prev;
  }
  save_checkpoint(*best, best_path);
  save_checkpoint(result.latest, (fs::path(out) / "latest.ckpt").string());

  outcome.report_paths.push_back(records_path);
  char line[160];
  std::snprintf(line, sizeof(line),
                "ran %zu epochs; best pseudo-dice %.4f at epoch %lld",
                result.records.size(), result.best_pseudo_dice,
                static_cast<long long>(result.best_epoch));
  log.push_back(line);
  std::printf("%s\n", line);
}

struct EvalRow {
  std::string id;
  std::array<double, 3> dice{0.0, 0.0, 0.0};
};

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "case,dice_et,dice_tc,dice_wt\n";
  char line[192];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f\n", r.id.c_str(),
                  r.dice[0], r.dice[1], r.dice[2]);
    out += line;
  }
  return out;
}

std::vector<EvalRow> parse_eval_csv(const std::string& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line) || line != "case,dice_et,dice_tc,dice_wt")
    throw DataError(path + ": missing or wrong evaluation CSV header");
  std::vector<EvalRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EvalRow r;
    const auto c0 = line.find(',');
    if (c0 == std::string::npos)
      throw DataError(path + ": malformed row '" + line + "'");
    r.id = line.substr(0, c0);
    if (std::sscanf(line.c_str() + c0, ",%lf,%lf,%lf", &r.dice[0], &r.dice[1],
                    &r.dice[2]) != 3)
      throw DataError(path + ": malformed row '" + line + "'");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(path + ": no evaluation rows");
  return rows;
}

}  // namespace

CommandOutcome run(int argc, const char* const* argv) {
  CommandOutcome outcome;
  CLI::App app{"MRI glioma segmentation with style-transfer augmentation"};
  app.require_subcommand(1);

  // ---- phantom-gen ----------------------------------------------------
  struct {
    std::string out;
    std::string prefix = "phantom";
    int64_t count = 0;
    uint64_t seed = 0;
    int64_t size = 64;
    bool degrade = false;
    double factor = 2.0, noise_sd = 4.0, bias = 0.3;
    int64_t slab = 8;
    int jobs = 1;
  } pg;
  auto* pg_cmd = app.add_subcommand(
      "phantom-gen", "Generate a synthetic multimodal phantom cohort");
  pg_cmd->add_option("--out", pg.out, "output directory")->required();
  pg_cmd->add_option("--count", pg.count, "number of cases")
      ->required()
      ->check(CLI::PositiveNumber);
  pg_cmd->add_option("--seed", pg.seed, "cohort seed")->required();
  pg_cmd->add_option("--prefix", pg.prefix, "case id prefix")
      ->capture_default_str();
  pg_cmd->add_option("--size", pg.size, "cube edge length in voxels")
      ->check(CLI::Range(static_cast<int64_t>(16), static_cast<int64_t>(512)))
      ->capture_default_str();
  pg_cmd->add_flag("--degrade", pg.degrade,
                   "apply resolution loss, noise, bias field, and slab cut");
  pg_cmd->add_option("--factor", pg.factor, "degrade: resolution loss factor")
      ->capture_default_str();
  pg_cmd->add_option("--noise-sd", pg.noise_sd, "degrade: added noise sd")
      ->capture_default_str();
  pg_cmd->add_option("--bias", pg.bias, "degrade: bias field amplitude")
      ->capture_default_str();
  pg_cmd->add_option("--slab", pg.slab, "degrade: bottom slices zeroed")
      ->capture_default_str();
  pg_cmd->add_option("--jobs", pg.jobs, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  pg_cmd->callback([&] {
    fs::create_directories(pg.out);
    std::vector<CaseEntry> entries(static_cast<size_t>(pg.count));
    run_indexed(pg.jobs, pg.count, [&](int64_t i) {
      char num[16];
      std::snprintf(num, sizeof(num), "-%05lld", static_cast<long long>(i));
      const auto spec = scaled_spec(pg.prefix + num,
                                    pg.seed + static_cast<uint64_t>(i), pg.size);
      CaseVolume c = generate_phantom(spec);
      if (pg.degrade) {
        DegradeSpec d;
        d.factor = pg.factor;
        d.noise_sd = pg.noise_sd;
        d.bias_amplitude = pg.bias;
        d.slab = pg.slab;
        d.seed = pg.seed + static_cast<uint64_t>(i);
        c = degrade_case(c, d);
      }
      entries[static_cast<size_t>(i)] = save_case(c, pg.out);
    });
    DatasetDescriptor d;
    d.name = pg.degrade ? "phantoms-degraded" : "phantoms-clean";
    d.cases = entries;
    const std::string path = (fs::path(pg.out) / "dataset.json").string();
    save_descriptor(d, path);
    outcome.report_paths.push_back(path);
    finish_log(outcome, pg.out,
               {"phantom-gen count=" + std::to_string(pg.count) +
                    " seed=" + std::to_string(pg.seed) +
                    " size=" + std::to_string(pg.size) +
                    " degrade=" + std::to_string(pg.degrade ? 1 : 0),
                "wrote dataset.json"});
  });

  // ---- preprocess -----------------------------------------------------
  struct {
    std::string in, out;
    std::vector<double> spacing{1.0, 1.0, 1.0};
    int jobs = 1;
  } pp;
  auto* pp_cmd = app.add_subcommand(
      "preprocess", "Crop, normalize, and resample a dataset");
  pp_cmd->add_option("--in", pp.in, "input dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  pp_cmd->add_option("--out", pp.out, "output directory")->required();
  pp_cmd->add_option("--spacing", pp.spacing, "target spacing (three values)")
      ->expected(3)
      ->capture_default_str();
  pp_cmd->add_option("--jobs", pp.jobs, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  pp_cmd->callback([&] {
    const auto d = load_descriptor(pp.in);
    fs::create_directories(pp.out);
    std::vector<CaseEntry> entries(d.cases.size());
    run_indexed(pp.jobs, static_cast<int64_t>(d.cases.size()), [&](int64_t i) {
      const auto c = load_case(d, d.cases[static_cast<size_t>(i)]);
      const auto p = preprocess_case(
          c, {pp.spacing[0], pp.spacing[1], pp.spacing[2]});
      entries[static_cast<size_t>(i)] = save_case(p, pp.out);
    });
    DatasetDescriptor o;
    o.name = d.name + "-pre";
    o.cases = entries;
    const std::string path = (fs::path(pp.out) / "dataset.json").string();
    save_descriptor(o, path);
    outcome.report_paths.push_back(path);
    finish_log(outcome, pp.out,
               {"preprocess in=" + pp.in + " cases=" +
                    std::to_string(d.cases.size()),
                "wrote dataset.json"});
  });

  // ---- augment --------------------------------------------------------
  struct {
    std::string in, style, out;
    uint64_t seed = 0;
    int iterations = 200;
    double alpha = 1.0, beta = 1e3, step = 0.02;
    std::string init = "content";
  } ag;
  auto* ag_cmd = app.add_subcommand(
      "augment", "Stylize a dataset against style cases (slice-wise NST)");
  ag_cmd->add_option("--in", ag.in, "content dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  ag_cmd->add_option("--style", ag.style, "style dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  ag_cmd->add_option("--out", ag.out, "output directory")->required();
  ag_cmd->add_option("--seed", ag.seed, "pairing/extractor seed")->required();
  ag_cmd->add_option("--iterations", ag.iterations, "optimizer steps per slice")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ag_cmd->add_option("--alpha", ag.alpha, "content weight")
      ->capture_default_str();
  ag_cmd->add_option("--beta", ag.beta, "style weight")->capture_default_str();
  ag_cmd->add_option("--step", ag.step, "pixel optimizer step size")
      ->capture_default_str();
  ag_cmd->add_option("--init", ag.init, "start image: content or noise")
      ->check(CLI::IsMember({"content", "noise"}))
      ->capture_default_str();
  ag_cmd->callback([&] {
    const auto dc = load_descriptor(ag.in);
    const auto ds = load_descriptor(ag.style);
    const auto content = load_all(dc);
    const auto styles = load_all(ds);
    const auto ex = FeatureExtractorSpec::defaults(ag.seed);
    StyleTransferConfig cfg;
    cfg.alpha = ag.alpha;
    cfg.beta = ag.beta;
    cfg.iterations = ag.iterations;
    cfg.step_size = ag.step;
    cfg.seed = ag.seed;
    cfg.init = ag.init == "noise" ? NstInit::kNoise : NstInit::kContentCopy;
    const auto res = augment_dataset(content, styles, ex, cfg);

    fs::create_directories(ag.out);
    DatasetDescriptor o;
    o.name = dc.name + "-nst";
    for (const auto& c : res.cases) o.cases.push_back(save_case(c, ag.out));
    const std::string path = (fs::path(ag.out) / "dataset.json").string();
    save_descriptor(o, path);

    std::string traces = "content,style,channel,slice,initial_loss,final_loss\n";
    char line[256];
    for (const auto& t : res.traces) {
      std::snprintf(line, sizeof(line), "%s,%s,%d,%lld,%.10g,%.10g\n",
                    t.content_id.c_str(), t.style_id.c_str(), t.channel,
                    static_cast<long long>(t.slice), t.initial_loss,
                    t.final_loss);
      traces += line;
    }
    const std::string tpath = (fs::path(ag.out) / "traces.csv").string();
    write_text(tpath, traces);
    outcome.report_paths.push_back(path);
    outcome.report_paths.push_back(tpath);
    finish_log(outcome, ag.out,
               {"augment in=" + ag.in + " style=" + ag.style + " seed=" +
                    std::to_string(ag.seed) + " iterations=" +
                    std::to_string(ag.iterations),
                "wrote dataset.json", "wrote traces.csv"});
  });

  // ---- train ----------------------------------------------------------
  TrainIo tr;
  auto* tr_cmd =
      app.add_subcommand("train", "Train a segmentation model from scratch");
  add_loop_options(tr_cmd, tr);
  auto* tr_seed = tr_cmd->add_option("--seed", tr.seed, "model/sampling seed");
  tr_cmd->add_option("--lr", tr.lr, "initial learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tr_cmd->add_option("--config", tr.config, "model configuration")
      ->check(CLI::IsMember({"desk2d", "desk3d", "full3d"}))
      ->capture_default_str();
  tr_cmd->add_option("--resume", tr.resume, "checkpoint to continue from")
      ->check(CLI::ExistingFile);
  tr_cmd->callback([&] {
    if (tr.resume.empty() && tr_seed->count() == 0)
      throw UsageError("train: --seed is required when not resuming");
    const auto train_cases = load_all(load_descriptor(tr.data));
    const auto val_cases = load_all(load_descriptor(tr.val));
    nn::Model model;
    if (!tr.resume.empty()) {
      model = load_checkpoint(tr.resume);
      if (tr.epochs > model.sched.max_epochs)
        throw UsageError("train: --epochs exceeds the checkpoint's schedule");
    } else {
      model = nn::build_model<float>(config_by_name(tr.config, tr.seed));
      model.sched.initial_lr = tr.lr;
      model.sched.max_epochs = tr.epochs;
    }
    const auto result =
        train_model(std::move(model), train_cases, val_cases, loop_options(tr));
    std::vector<std::string> log{"train data=" + tr.data + " val=" + tr.val};
    emit_train_outputs(result, tr.out, !tr.resume.empty(), outcome, log);
    finish_log(outcome, tr.out, log);
  });

  // ---- finetune ---------------------------------------------------------
  TrainIo ft;
  auto* ft_cmd = app.add_subcommand(
      "finetune", "Continue from a checkpoint with reset optimizer at 0.1x LR");
  add_loop_options(ft_cmd, ft);
  ft_cmd->add_option("--from", ft.from, "pretrained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ft_cmd->callback([&] {
    const auto train_cases = load_all(load_descriptor(ft.data));
    const auto val_cases = load_all(load_descriptor(ft.val));
    const auto pretrained = load_checkpoint(ft.from);
    const auto result =
        finetune_model(pretrained, train_cases, val_cases, loop_options(ft));
    std::vector<std::string> log{"finetune from=" + ft.from};
    emit_train_outputs(result, ft.out, false, outcome, log);
    finish_log(outcome, ft.out, log);
  });

  // ---- crossval ---------------------------------------------------------
  TrainIo cv;
  auto* cv_cmd = app.add_subcommand(
      "crossval", "Five-fold cross-validation over one dataset");
  cv_cmd->add_option("--data", cv.data, "dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  cv_cmd->add_option("--out", cv.out, "output directory")->required();
  cv_cmd->add_option("--seed", cv.seed, "fold/model seed")->required();
  cv_cmd->add_option("--epochs", cv.epochs, "epochs per fold")
      ->required()
      ->check(CLI::PositiveNumber);
  cv_cmd->add_option("--batches", cv.batches, "train batches per epoch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cv_cmd->add_option("--val-batches", cv.val_batches,
                     "validation batches per epoch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cv_cmd->add_option("--oversample", cv.oversample,
                     "chance a patch centers on tumor")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cv_cmd->add_option("--lr", cv.lr, "initial learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cv_cmd->add_option("--config", cv.config, "model configuration")
      ->check(CLI::IsMember({"desk2d", "desk3d", "full3d"}))
      ->capture_default_str();
  cv_cmd->add_flag("--wall-clock", cv.wall_clock,
                   "record epoch seconds (breaks byte reproducibility)");
  cv_cmd->callback([&] {
    const auto d = load_descriptor(cv.data);
    const auto split = make_folds(d.case_ids(), cv.seed);
    fs::create_directories(cv.out);
    std::vector<std::pair<int, EpochRecord>> all_rows;
    std::vector<std::string> log{"crossval data=" + cv.data +
                                 " seed=" + std::to_string(cv.seed)};
    for (int f = 0; f < split.k; ++f) {
      const auto vids = split.validation_ids(f);
      const std::set<std::string> val_ids(vids.begin(), vids.end());
      std::vector<CaseVolume> train_cases, val_cases;
      for (const auto& e : d.cases) {
        auto c = load_case(d, e);
        (val_ids.count(e.id) ? val_cases : train_cases).push_back(std::move(c));
      }
      auto model = nn::build_model<float>(
          config_by_name(cv.config, cv.seed + static_cast<uint64_t>(f)));
      model.sched.initial_lr = cv.lr;
      model.sched.max_epochs = cv.epochs;
      const auto result = train_model(std::move(model), train_cases, val_cases,
                                      loop_options(cv));
      const std::string fold_dir =
          (fs::path(cv.out) / ("fold" + std::to_string(f))).string();
      std::vector<std::string> fold_log{"fold " + std::to_string(f)};
      emit_train_outputs(result, fold_dir, false, outcome, fold_log);
      for (const auto& l : fold_log) log.push_back("  " + l);
      for (const auto& r : result.records) all_rows.emplace_back(f, r);
    }
    const std::string path = (fs::path(cv.out) / "crossval.csv").string();
    write_text(path, fold_record_csv(all_rows));
    outcome.report_paths.push_back(path);
    log.push_back("wrote crossval.csv");
    finish_log(outcome, cv.out, log);
  });

  // ---- predict ----------------------------------------------------------
  struct {
    std::string data, model, out;
    int jobs = 1;
  } pr;
  auto* pr_cmd = app.add_subcommand(
      "predict", "Sliding-window inference over a dataset");
  pr_cmd->add_option("--data", pr.data, "dataset descriptor")
      ->required()
      ->check(CLI::ExistingFile);
  pr_cmd->add_option("--model", pr.model, "checkpoint to run")
      ->required()
      ->check(CLI::ExistingFile);
  pr_cmd->add_option("--out", pr.out, "output directory")->required();
  pr_cmd->add_option("--jobs", pr.jobs, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  pr_cmd->callback([&] {
    const auto d = load_descriptor(pr.data);
    const auto net = load_checkpoint(pr.model);
    fs::create_directories(pr.out);
    run_indexed(pr.jobs, static_cast<int64_t>(d.cases.size()), [&](int64_t i) {
      const auto& e = d.cases[static_cast<size_t>(i)];
      const auto c = load_case(d, e);
      const auto pred = nn::sliding_window_predict(net, c);
      write_nifti(pred, (fs::path(pr.out) / (e.id + "_pred.nii")).string());
    });
    finish_log(outcome, pr.out,
               {"predict data=" + pr.data + " model=" + pr.model,
                "predicted " + std::to_string(d.cases.size()) + " cases"});
  });

  // ---- evaluate ---------------------------------------------------------
  struct {
    std::string data, pred, out;
    bool lesion_wise = false;
    int jobs = 1;
  } ev;
  auto* ev_cmd = app.add_subcommand(
      "evaluate", "Score predictions against truth per region");
  ev_cmd->add_option("--data", ev.data, "dataset descriptor with truth")
      ->required()
      ->check(CLI::ExistingFile);
  ev_cmd->add_option("--pred", ev.pred, "directory of <id>_pred.nii files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--out", ev.out, "output CSV path")->required();
  ev_cmd->add_flag("--lesion-wise", ev.lesion_wise,
                   "score per lesion instead of whole regions");
  ev_cmd->add_option("--jobs", ev.jobs, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ev_cmd->callback([&] {
    const auto d = load_descriptor(ev.data);
    std::vector<EvalRow> rows(d.cases.size());
    run_indexed(ev.jobs, static_cast<int64_t>(d.cases.size()), [&](int64_t i) {
      const auto& e = d.cases[static_cast<size_t>(i)];
      const auto c = load_case(d, e);
      if (!c.truth) throw DataError("evaluate: case " + e.id + " has no truth");
      const auto pred = read_nifti_labels(
          (fs::path(ev.pred) / (e.id + "_pred.nii")).string());
      auto& row = rows[static_cast<size_t>(i)];
      row.id = e.id;
      if (ev.lesion_wise) {
        const auto rep = lesion_wise_report(pred, *c.truth, e.id);
        for (int r = 0; r < 3; ++r) row.dice[r] = rep.regions[r].dice;
      } else {
        row.dice = region_dice_report(pred, *c.truth, e.id).dice;
      }
    });
    write_text(ev.out, eval_csv(rows));
    outcome.report_paths.push_back(ev.out);
    std::printf("evaluated %zu cases -> %s\n", rows.size(), ev.out.c_str());
  });

  // ---- stats ------------------------------------------------------------
  struct {
    std::string a, b, column = "pseudo_dice", out;
  } st;
  auto* st_cmd = app.add_subcommand(
      "stats", "Paired t-test between two epoch record CSVs");
  st_cmd->add_option("a", st.a, "first records CSV")
      ->required()
      ->check(CLI::ExistingFile);
  st_cmd->add_option("b", st.b, "second records CSV")
      ->required()
      ->check(CLI::ExistingFile);
  st_cmd->add_option("--column", st.column, "column to compare")
      ->check(CLI::IsMember({"pseudo_dice", "train_loss", "val_loss"}))
      ->capture_default_str();
  st_cmd->add_option("--out", st.out, "optional JSON report path");
  st_cmd->callback([&] {
    const auto pick = [&](const EpochRecord& r) {
      if (st.column == "train_loss") return r.train_loss;
      if (st.column == "val_loss") return r.val_loss;
      return r.pseudo_dice;
    };
    std::vector<double> va, vb;
    for (const auto& r : parse_epoch_records_csv(read_text(st.a)))
      va.push_back(pick(r));
    for (const auto& r : parse_epoch_records_csv(read_text(st.b)))
      vb.push_back(pick(r));
    const auto res = paired_t_test(va, vb);
    std::printf("t=%.4f p=%.4f df=%lld\n", res.t_stat, res.p_value,
                static_cast<long long>(res.df));
    if (!st.out.empty()) {
      nlohmann::json j;
      j["column"] = st.column;
      j["t"] = res.t_stat;
      j["p"] = res.p_value;
      j["df"] = res.df;
      j["significant"] = res.significant;
      write_text(st.out, j.dump(2) + "\n");
      outcome.report_paths.push_back(st.out);
    }
  });

  // ---- report -----------------------------------------------------------
  struct {
    std::string out;
    std::vector<std::string> folds;
  } rp;
  auto* rp_cmd = app.add_subcommand(
      "report", "Aggregate per-fold evaluation CSVs into one table");
  rp_cmd->add_option("--out", rp.out, "output CSV path")->required();
  rp_cmd->add_option("folds", rp.folds, "per-fold evaluation CSVs")
      ->required()
      ->check(CLI::ExistingFile);
  rp_cmd->callback([&] {
    std::string csv = "fold,dice_et,dice_tc,dice_wt\n";
    char line[128];
    for (size_t f = 0; f < rp.folds.size(); ++f) {
      const auto rows = parse_eval_csv(rp.folds[f]);
      std::array<double, 3> mean{0.0, 0.0, 0.0};
      for (const auto& r : rows)
        for (int k = 0; k < 3; ++k) mean[k] += r.dice[k];
      for (int k = 0; k < 3; ++k) mean[k] /= static_cast<double>(rows.size());
      std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f\n", f, mean[0],
                    mean[1], mean[2]);
      csv += line;
    }
    write_text(rp.out, csv);
    outcome.report_paths.push_back(rp.out);
    std::printf("aggregated %zu folds -> %s\n", rp.folds.size(), rp.out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc != 0) {
      outcome.exit_code = 2;
      outcome.errors.push_back(e.get_name());
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    outcome.exit_code = 2;
    outcome.errors.push_back(e.what());
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    outcome.exit_code = 4;
    outcome.errors.push_back(e.what());
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    outcome.exit_code = 3;
    outcome.errors.push_back(e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    outcome.exit_code = 3;
    outcome.errors.push_back(e.what());
  }
  return outcome;
}

}  // namespace styleseg::cli
