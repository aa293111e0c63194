// kdlab command line: data generation, teacher training, distillation grids, A/B tests and reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdlab/datagen/rawio.hpp"
#include "kdlab/distill/gradsuite.hpp"
#include "kdlab/harness/abtest.hpp"
#include "kdlab/harness/config.hpp"
#include "kdlab/harness/fixtures.hpp"
#include "kdlab/harness/grid.hpp"
#include "kdlab/harness/rank.hpp"
#include "kdlab/harness/report.hpp"
#include "kdlab/harness/stats.hpp"
#include "kdlab/netcore/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace kdl;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_trial = 3;
constexpr int exit_fixture = 4;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::optional<std::size_t> threads;
  std::string precision = "f32";
};

harness::ExperimentConfig load(const Globals& g) {
  auto cfg = g.config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

template <typename F>
int with_precision(const Globals& g, F&& f) {
  if (g.precision == "f64") return f(double{});
  return f(float{});
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_records(const std::vector<harness::RunRecord>& records) {
  std::printf("%-12s %-5s %8s %8s %8s %8s %8s %8s %8s\n", "trial", "mode", "val_acc", "affinity", "top1_agr", "kl",
              "mi", "iou", "ece");
  for (const auto& r : records) {
    auto row = harness::report_row(r);
    std::printf("%-12s %-5s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", row.trial.c_str(), row.mode.c_str(),
                row.val_acc, row.affinity, row.top1_agreement, row.kl_fidelity, row.mutual_information,
                row.mean_teacher_iou, row.ece);
  }
}

void print_trends(const std::vector<harness::RunRecord>& records) {
  if (records.size() < 2) return;
  std::vector<double> aff, iou, fid;
  for (const auto& r : records) {
    auto row = harness::report_row(r);
    aff.push_back(row.affinity);
    iou.push_back(row.mean_teacher_iou);
    fid.push_back(row.top1_agreement);
  }
  auto show = [](const char* name, std::optional<double> v) {
    std::printf("spearman(affinity, %s) = %s\n", name, v ? fixed(*v).c_str() : "undefined (constant input)");
  };
  show("mean_teacher_iou", harness::spearman(aff, iou));
  show("top1_agreement", harness::spearman(aff, fid));
  auto rank = harness::rank_trials(records);
  std::printf("min affinity: %s, max val_acc: %s\n", rank.min_affinity.c_str(), rank.max_val_acc.c_str());
}

std::vector<harness::RunRecord> collect_records(const std::vector<std::string>& paths) {
  std::vector<harness::RunRecord> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(harness::load_record(f.string()));
    } else {
      out.push_back(harness::load_record(p));
    }
  }
  return out;
}

int cmd_gen_data(const Globals& g, const std::string& cifar_dir, bool cifar100) {
  fs::create_directories(g.out);
  data::SplitDataset d;
  if (!cifar_dir.empty()) {
    auto read = [&](const std::vector<std::string>& names) {
      std::vector<std::string> blobs;
      for (const auto& n : names) blobs.push_back(binio::read_file((fs::path(cifar_dir) / n).string()));
      return blobs;
    };
    if (cifar100) {
      d.train = data::decode_cifar_binary(read({"train.bin"}), true, data::Split::train);
      d.val = data::decode_cifar_binary(read({"test.bin"}), true, data::Split::val);
    } else {
      d.train = data::decode_cifar_binary(
          read({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"}),
          false, data::Split::train);
      d.val = data::decode_cifar_binary(read({"test_batch.bin"}), false, data::Split::val);
    }
    const auto cfg = load(g);
    if (cfg.dataset.imbalance > 1.0) d.train = data::longtail_subsample(d.train, cfg.dataset.imbalance, cfg.dataset.seed);
  } else {
    d = harness::load_experiment_data(load(g));
  }
  const auto train_path = (fs::path(g.out) / "train.kdds").string();
  const auto val_path = (fs::path(g.out) / "val.kdds").string();
  data::save_raw_dataset(train_path, d.train);
  data::save_raw_dataset(val_path, d.val);
  std::printf("wrote %s (%zu images) and %s (%zu images), %zux%zux%zu, %zu classes\n", train_path.c_str(),
              d.train.size(), val_path.c_str(), d.val.size(), d.train.height, d.train.width, d.train.channels,
              d.train.classes);
  return exit_ok;
}

int cmd_train_teacher(const Globals& g, const std::string& policy, std::size_t slot) {
  const auto cfg = load(g);
  const auto kind = data::policy_from_string(policy);
  if (slot == 0) throw Error(ErrorKind::config, "--slot counts from 1");
  return with_precision(g, [&](auto tag) {
    using T = decltype(tag);
    harness::GridContext<T> ctx(cfg, g.out);
    const auto& e = harness::grid_teacher(ctx, slot - 1, kind);
    const std::string name = "T" + std::to_string(slot) + distill::policy_letter(kind);
    fs::create_directories(g.out);
    net::save_checkpoint((fs::path(g.out) / (name + ".kdlb")).string(), e.spec, e.params);
    harness::RunRecord r = e.record;
    r.trial = name;
    harness::persist_record(r, (fs::path(g.out) / (name + ".jsonl")).string());
    std::printf("%s: train_acc %s val_acc %s affinity %s ece %s (cache key %s)\n", name.c_str(),
                fixed(r.final_train_acc).c_str(), fixed(r.final_val_acc).c_str(), fixed(r.affinity).c_str(),
                fixed(r.ece).c_str(), e.key.c_str());
    return exit_ok;
  });
}

int cmd_distill(const Globals& g, const std::string& label, bool hkd) {
  const auto cfg = load(g);
  auto trial = distill::parse_trial_label(label);
  trial.hkd = hkd;
  return with_precision(g, [&](auto tag) {
    using T = decltype(tag);
    harness::GridContext<T> ctx(cfg, g.out);
    trial.dataset_id = ctx.cfg.dataset.id();
    auto s = harness::run_trial(ctx, trial);
    const fs::path dir = fs::path(g.out) / harness::mode_name(hkd);
    fs::create_directories(dir);
    harness::persist_record(s.record, (dir / (label + ".jsonl")).string());
    net::save_checkpoint((dir / (label + ".kdlb")).string(), s.spec, s.params);
    print_records({s.record});
    return exit_ok;
  });
}

int cmd_grid(const Globals& g, bool hkd, bool timing) {
  const auto cfg = load(g);
  return with_precision(g, [&](auto tag) {
    using T = decltype(tag);
    harness::GridOptions opt;
    opt.hkd = hkd;
    opt.out_dir = g.out;
    opt.include_timing = timing;
    auto res = harness::run_grid<T>(cfg, opt);
    print_records(res.records);
    print_trends(res.records);
    std::printf("teacher trainings: %zu\n", res.teacher_trainings);
    for (const auto& f : res.failures) std::printf("FAILED %s: %s\n", f.trial.c_str(), f.message.c_str());
    return res.failures.empty() ? exit_ok : exit_trial;
  });
}

void print_ab(const harness::ABTestResult& r) {
  std::printf("%-12s %8s %8s %8s %8s %8s %8s %8s %8s\n", "trial", "gap_v", "gap_h", "iou_v", "iou_h", "fid_v", "fid_h",
              "val_v", "val_h");
  for (const auto& p : r.pairs)
    std::printf("%-12s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", p.trial.c_str(), p.accgap_v, p.accgap_h,
                p.iou_v, p.iou_h, p.fid_v, p.fid_h, p.val_v, p.val_h);
  std::printf("exceedance %zu of %zu, p-value %s\n", r.exceedance, r.num, metrics::format_real(r.p_value).c_str());
}

int cmd_abtest(const Globals& g, bool timing) {
  const auto cfg = load(g);
  return with_precision(g, [&](auto tag) {
    using T = decltype(tag);
    harness::GridOptions opt;
    opt.out_dir = g.out;
    opt.include_timing = timing;
    harness::ABRun run;
    try {
      run = harness::ab_test<T>(cfg, opt);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config) throw;
      std::fprintf(stderr, "abtest: %s\n", e.what());
      return exit_trial;
    }
    print_ab(run.result);
    double iv = 0, ih = 0, gv = 0, gh = 0;
    for (const auto& p : run.result.pairs) {
      iv += p.iou_v, ih += p.iou_h, gv += p.accgap_v, gh += p.accgap_h;
    }
    const double n = static_cast<double>(run.result.num);
    std::printf("mean iou vKD %s hKD %s, mean acc gap vKD %s hKD %s\n", fixed(iv / n).c_str(), fixed(ih / n).c_str(),
                fixed(gv / n).c_str(), fixed(gh / n).c_str());
    std::string csv = "dataset,trial,accgap_v,accgap_h,iou_v,iou_h,fid_v,fid_h,val_v,val_h\n";
    for (const auto& p : run.result.pairs)
      csv += p.dataset + ',' + p.trial + ',' + metrics::format_real(p.accgap_v) + ',' + metrics::format_real(p.accgap_h) +
             ',' + metrics::format_real(p.iou_v) + ',' + metrics::format_real(p.iou_h) + ',' +
             metrics::format_real(p.fid_v) + ',' + metrics::format_real(p.fid_h) + ',' + metrics::format_real(p.val_v) +
             ',' + metrics::format_real(p.val_h) + '\n';
    binio::write_file((fs::path(g.out) / "ab.csv").string(), csv);
    return exit_ok;
  });
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs, const std::string& kind_name,
               const std::string& x, const std::string& y, std::string file) {
  const auto kind = harness::report_kind_from_string(kind_name);
  auto records = collect_records(inputs);
  if (records.empty()) std::fprintf(stderr, "kdlab: warning: no .jsonl records found (directories are not searched recursively)\n");
  if (file.empty()) {
    fs::create_directories(g.out);
    file = (fs::path(g.out) / ("report_" + kind_name + (kind == harness::ReportKind::svg ? ".svg" : ".csv"))).string();
  }
  harness::emit_report(records, kind, file, x, y);
  print_records(records);
  print_trends(records);
  std::printf("wrote %s\n", file.c_str());
  return exit_ok;
}

int cmd_gradcheck(std::size_t seeds, double tolerance) {
  double worst = 0.0;
  std::map<std::string, double> per_loss;
  for (std::size_t s = 0; s < seeds; ++s)
    for (const auto& r : distill::loss_gradient_suite(s)) {
      auto& e = per_loss[r.loss + " (" + r.level + ")"];
      e = std::max(e, r.report.max_relative_error);
      worst = std::max(worst, r.report.max_relative_error);
    }
  for (const auto& [name, err] : per_loss) std::printf("%-28s max relative error %.3e\n", name.c_str(), err);
  const bool ok = worst <= tolerance;
  std::printf("%s: worst %.3e over %zu seeds (tolerance %.1e)\n", ok ? "ok" : "FAILED", worst, seeds, tolerance);
  return ok ? exit_ok : exit_trial;
}

int cmd_fixtures(const std::string& dir) {
  bool ok = true;
  for (const auto& c : harness::verify_fixtures(dir)) {
    std::printf("%-4s %-32s %s\n", c.ok ? "ok" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.ok;
  }
  return ok ? exit_ok : exit_fixture;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdlab: ensemble knowledge distillation experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--config", g.config_path, "experiment JSON file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "run seed (overrides the config)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  auto* threads_opt = app.add_option("--threads", threads, "worker threads for independent trials");
  app.add_option("--precision", g.precision, "floating point width")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "write the configured dataset (or a CIFAR conversion) as KDDS files");
  std::string cifar_dir;
  bool cifar100 = false;
  gen->add_option("--cifar-dir", cifar_dir, "directory holding CIFAR binary batches");
  gen->add_flag("--cifar100", cifar100, "the directory holds CIFAR-100 (train.bin, test.bin)");

  auto* teach = app.add_subcommand("train-teacher", "train one teacher with the NLL loss");
  std::string policy = "weak";
  std::size_t slot = 1;
  teach->add_option("--policy", policy, "identity, weak or strong")->capture_default_str();
  teach->add_option("--slot", slot, "teacher slot, from 1; selects the teacher seed")->capture_default_str();

  auto* dist = app.add_subcommand("distill", "distil one student for a grid cell");
  std::string trial;
  bool hkd = false;
  dist->add_option("--trial", trial, "cell label, e.g. T1wT2sSs")->required();
  dist->add_flag("--hkd", hkd, "each teacher sees one half of every image");

  auto* grid = app.add_subcommand("grid", "run every policy assignment");
  bool timing = false;
  grid->add_flag("--hkd", hkd, "half-image teachers");
  grid->add_flag("--timing", timing, "store wall-clock seconds in records (breaks byte-identical output)");

  auto* ab = app.add_subcommand("abtest", "paired vKD/hKD grids and the exceedance p-value");
  ab->add_flag("--timing", timing, "store wall-clock seconds in records");

  auto* rep = app.add_subcommand("report", "tables, trend statistics and plots from stored records");
  std::vector<std::string> inputs;
  std::string kind = "scatter_csv", xcol = "mean_teacher_iou", ycol = "val_acc", file;
  rep->add_option("records", inputs, "record files or directories")->required();
  rep->add_option("--kind", kind, "scatter_csv, bars_csv, reliability_csv or svg")->capture_default_str();
  rep->add_option("--x", xcol, "svg x column")->capture_default_str();
  rep->add_option("--y", ycol, "svg y column")->capture_default_str();
  rep->add_option("--file", file, "output file (default: <out>/report_<kind>.<ext>)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every loss gradient");
  std::size_t seeds = 10;
  double tolerance = 1e-4;
  gc->add_option("--seeds", seeds, "random tiny networks")->capture_default_str();
  gc->add_option("--tolerance", tolerance, "max relative error")->capture_default_str();

  auto* fx = app.add_subcommand("fixtures", "check ranking and p-value logic against the shipped tables");
  std::string fixture_dir = harness::default_fixture_dir();
  fx->add_option("--dir", fixture_dir, "fixture directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_config;
  }
  if (seed_opt->count()) g.seed = seed;
  if (threads_opt->count()) g.threads = threads;

  try {
    if (*gen) return cmd_gen_data(g, cifar_dir, cifar100);
    if (*teach) return cmd_train_teacher(g, policy, slot);
    if (*dist) return cmd_distill(g, trial, hkd);
    if (*grid) return cmd_grid(g, hkd, timing);
    if (*ab) return cmd_abtest(g, timing);
    if (*rep) return cmd_report(g, inputs, kind, xcol, ycol, file);
    if (*gc) return cmd_gradcheck(seeds, tolerance);
    if (*fx) return cmd_fixtures(fixture_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "kdlab: %s\n", e.what());
    return e.kind() == ErrorKind::config ? exit_config : exit_trial;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "kdlab: %s\n", e.what());
    return exit_trial;
  }
  return exit_ok;
}
