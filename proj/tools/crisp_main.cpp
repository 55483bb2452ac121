// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <omp.h>

#include "CLI11.hpp"

#include "crisp/hybrid_format.hpp"
#include "crisp/perf_model.hpp"
#include "crisp/pipeline.hpp"
#include "crisp/sparse_kernel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crisp;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    ExperimentConfig cfg;
    apply_seed_override(cfg);
    return cfg;
  }
  return load_experiment_config(path);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

struct GenDataArgs {
  std::string config, out;
};

int cmd_gen_data(const GenDataArgs& a) {
  const auto cfg = config_or_default(a.config);
  fs::create_directories(a.out);
  const auto data = gen_synthetic(cfg.data.classes, cfg.data.dim, cfg.data.per_class, cfg.seed,
                                  cfg.data.noise);
  save_dataset((fs::path(a.out) / "dataset.bin").string(), data);
  write_manifest(a.out, "gen-data",
                 make_manifest("gen-data", cfg.seed, config_to_json(cfg), {"dataset.bin"}));
  std::cout << "dataset: " << data.train_y.size() << " train, " << data.test_y.size()
            << " test samples\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
};

int cmd_train(const TrainArgs& a) {
  const auto cfg = config_or_default(a.config);
  fs::create_directories(a.out);
  const auto data = a.data.empty() ? gen_synthetic(cfg.data.classes, cfg.data.dim,
                                                   cfg.data.per_class, cfg.seed, cfg.data.noise)
                                   : load_dataset(a.data);
  auto model = make_mlp(data.dim, cfg.hidden, data.classes, cfg.seed + 1);
  TrainOptions opts = cfg.train;
  opts.seed = cfg.seed + 2;
  const auto curve = train(model, data.train_x, data.train_y, opts);
  std::vector<std::uint32_t> all(data.classes);
  for (std::uint32_t c = 0; c < data.classes; ++c) all[c] = c;
  const double acc = evaluate(model, data, all);
  save_model((fs::path(a.out) / "pretrained.bin").string(), model);
  write_text(fs::path(a.out) / "train_curve.csv", train_curve_csv(curve));
  auto manifest = make_manifest("train", cfg.seed, config_to_json(cfg),
                                {"pretrained.bin", "train_curve.csv"});
  manifest["results"] = {{"test_accuracy", acc}};
  write_manifest(a.out, "train", manifest);
  std::cout << "test accuracy (all classes): " << fmt(acc) << '\n';
  return 0;
}

struct PruneArgs {
  std::string config, out;
};

int cmd_prune(const PruneArgs& a) {
  const auto cfg = config_or_default(a.config);
  const auto res = run_prune_to_dir(cfg, a.out);
  std::cout << "dense u_c accuracy: " << fmt(res.dense_acc_uc) << '\n'
            << "pruned u_c accuracy: " << fmt(res.pruned_acc_uc) << '\n'
            << "sparsity: " << fmt(measured_sparsity(res.pruned.model)) << '\n';
  return 0;
}

struct EvalArgs {
  std::string model, classes, data, out;
  bool restrict_logits = false;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path model_path(a.model);
  const fs::path dir = model_path.has_parent_path() ? model_path.parent_path() : fs::path(".");
  const fs::path data_path = a.data.empty() ? dir / "dataset.bin" : fs::path(a.data);
  const fs::path out = a.out.empty() ? dir : fs::path(a.out);
  const auto classes = parse_class_list(a.classes);
  const auto model = load_model(model_path.string());
  const auto data = load_dataset(data_path.string());
  for (auto c : classes) {
    if (c >= data.classes) throw UsageError("class " + std::to_string(c) + " not in dataset");
  }
  if (model.input_dim() != data.dim || model.class_count != data.classes) {
    throw DimensionError("model and dataset shapes differ");
  }
  const double acc = evaluate(model, data, classes, a.restrict_logits);
  const double sparsity = measured_sparsity(model);
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "model,classes,restrict_logits,accuracy,sparsity\n"
      << model_path.filename().string() << ",\"" << a.classes << "\"," << a.restrict_logits << ','
      << fmt(acc) << ',' << fmt(sparsity) << '\n';
  write_text(out / "eval.csv", csv.str());
  json cfg = {{"model", model_path.string()},
              {"data", data_path.string()},
              {"classes", classes},
              {"restrict_logits", a.restrict_logits}};
  auto manifest = make_manifest("eval", data.seed, cfg, {"eval.csv"});
  manifest["results"] = {{"accuracy", acc}, {"sparsity", sparsity}};
  write_manifest(out, "eval", manifest);
  std::cout << "accuracy: " << fmt(acc) << '\n';
  return 0;
}

struct MetadataArgs {
  std::uint64_t s = 0, k = 0, kprime = 0, seed = 1;
  std::uint32_t block = 16;
  std::string nm = "2:4", out;
};

int cmd_report_metadata(const MetadataArgs& a) {
  const auto nm = NmConfig::parse(a.nm);
  const BlockConfig block{a.block};
  validate_config(nm, block);
  if (a.kprime > a.k) throw UsageError("--kprime must not exceed --k");
  const double density = a.k ? static_cast<double>(a.kprime) / a.k * nm.density() : 0.0;
  const auto rows = unstructured_row_counts(a.s, a.k, density, a.seed);
  const auto r = metadata_report(a.s, a.k, a.kprime, block, nm, rows);
  std::ostringstream csv;
  csv << "s,k,kprime,block,nm,overall_sparsity,crisp_block_bits,crisp_nm_bits,crisp_total_bits,"
         "crisp_block_bits_addressable,unstructured_nnz,csr_bits,ellpack_bits,csr_ratio,"
         "ellpack_ratio\n"
      << a.s << ',' << a.k << ',' << a.kprime << ',' << a.block << ',' << nm.to_string() << ','
      << fmt(r.overall_sparsity) << ',' << fmt(r.crisp_block_bits) << ','
      << fmt(r.crisp_nm_bits) << ',' << fmt(r.crisp_total_bits) << ','
      << fmt(r.crisp_block_bits_addressable) << ',' << r.unstructured_nnz << ',' << r.csr_bits
      << ',' << r.ellpack_bits << ','
      << (r.crisp_total_bits > 0 ? fmt(r.csr_ratio()) : "inf") << ','
      << (r.crisp_total_bits > 0 ? fmt(r.ellpack_ratio()) : "inf") << '\n';
  std::cout << csv.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "metadata.csv", csv.str());
    json cfg = {{"s", a.s},         {"k", a.k},   {"kprime", a.kprime},
                {"block", a.block}, {"nm", a.nm}, {"seed", a.seed}};
    write_manifest(a.out, "report-metadata",
                   make_manifest("report-metadata", a.seed, cfg, {"metadata.csv"}));
  }
  return 0;
}

struct SpmmArgs {
  std::uint32_t cases = 200;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_spmm_check(const SpmmArgs& a) {
  std::mt19937_64 rng(a.seed);
  const NmConfig nms[] = {{1, 4}, {2, 4}, {3, 4}};
  const std::uint32_t blocks[] = {4, 8, 16};
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  std::uint32_t mismatches = 0;
  double max_rel = 0.0;
  for (std::uint32_t c = 0; c < a.cases; ++c) {
    const auto nm = nms[rng() % 3];
    const std::uint32_t b = blocks[rng() % 3];
    const std::size_t s = b * (1 + rng() % 3), k = b * (1 + rng() % 4), batch = 1 + rng() % 5;
    DenseMatrix w(s, k);
    for (auto& v : w.values()) v = val(rng);
    // Random uniform block keep plus random N positions per group.
    const std::size_t bc = k / b, keep = 1 + rng() % bc;
    PruneMask mask(s, k, false);
    for (std::size_t br = 0; br < s / b; ++br) {
      std::vector<std::size_t> cols(bc);
      for (std::size_t i = 0; i < bc; ++i) cols[i] = i;
      std::shuffle(cols.begin(), cols.end(), rng);
      for (std::size_t i = 0; i < keep; ++i) {
        for (std::size_t r = br * b; r < (br + 1) * b; ++r) {
          for (std::size_t g = cols[i] * b; g < (cols[i] + 1) * b; g += nm.m) {
            std::vector<std::size_t> pos(nm.m);
            for (std::size_t j = 0; j < nm.m; ++j) pos[j] = j;
            std::shuffle(pos.begin(), pos.end(), rng);
            for (std::size_t j = 0; j < nm.n; ++j) mask.set(r, g + pos[j], true);
          }
        }
      }
    }
    const auto h = encode(w, mask, nm, BlockConfig{b});
    DenseMatrix acts(batch, k);
    for (auto& v : acts.values()) v = val(rng);
    const auto got = spmm(h, acts);
    const auto want = matmul_dense_serial(acts, decode(h));
    bool same = true;
    for (std::size_t i = 0; i < got.values().size(); ++i) {
      const double g = got.values()[i], e = want.values()[i];
      if (g != e) same = false;
      const double denom = std::max(std::abs(e), 1e-300);
      max_rel = std::max(max_rel, std::abs(g - e) / denom);
    }
    if (!same) ++mismatches;
  }
  std::ostringstream csv;
  csv << "cases,mismatches,max_rel_error\n"
      << a.cases << ',' << mismatches << ',' << fmt(max_rel) << '\n';
  std::cout << csv.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "spmm_check.csv", csv.str());
    write_manifest(a.out, "spmm-check",
                   make_manifest("spmm-check", a.seed, {{"cases", a.cases}, {"seed", a.seed}},
                                 {"spmm_check.csv"}));
  }
  if (mismatches) {
    std::cerr << "error: spmm differs from the decoded dense product in " << mismatches
              << " cases\n";
    return 1;
  }
  return 0;
}

struct SweepArgs {
  std::string hw, layers, out;
};

int cmd_perf_sweep(const SweepArgs& a) {
  const HwConfig hw = a.hw.empty() ? HwConfig{} : hw_from_json(read_json(a.hw));
  const auto layers = a.layers.empty() ? resnet50_like_layers() : layers_from_json(read_json(a.layers));
  hw.validate();
  const auto rows = sweep(layers, SweepGrid{}, hw);
  fs::create_directories(a.out);
  std::string csv = sweep_csv_header() + "\n";
  for (const auto& r : rows) csv += sweep_csv_row(r) + "\n";
  write_text(fs::path(a.out) / "perf_sweep.csv", csv);
  json cfg = {{"hw", hw_to_json(hw)}, {"layers", json::array()}};
  for (const auto& l : layers) {
    cfg["layers"].push_back({{"name", l.name}, {"batch", l.batch}, {"s", l.s}, {"k", l.k}});
  }
  write_manifest(a.out, "perf-sweep", make_manifest("perf-sweep", 0, cfg, {"perf_sweep.csv"}));
  std::cout << "perf sweep: " << rows.size() << " rows written to "
            << (fs::path(a.out) / "perf_sweep.csv").string() << '\n';
  return 0;
}

int cmd_inspect(const std::string& file) {
  std::string dump, error;
  const bool ok = inspect_crsp(file, dump, error);
  std::cout << dump;
  if (!ok) {
    std::cerr << "error: " << error << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crisp: hybrid block + N:M sparsity toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  int threads = 1;
  app.add_option("--threads", threads, "OpenMP threads")->check(CLI::PositiveNumber);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen_cmd->add_option("--config", gen.config, "Experiment config JSON");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Pretrain the dense model on all classes");
  train_cmd->add_option("--config", tr.config, "Experiment config JSON");
  train_cmd->add_option("--data", tr.data, "Dataset file (default: generate from config)");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();

  PruneArgs pr;
  auto* prune_cmd = app.add_subcommand("prune", "Train, personalize and prune end to end");
  prune_cmd->add_option("--config", pr.config, "Experiment config or prune manifest JSON");
  prune_cmd->add_option("--out", pr.out, "Output directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a model on selected classes");
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--classes", ev.classes, "Comma-separated class ids")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset file (default: dataset.bin next to the model)");
  eval_cmd->add_option("--out", ev.out, "Output directory (default: the model's directory)");
  eval_cmd->add_flag("--restrict-logits", ev.restrict_logits, "Argmax over the listed classes only");

  MetadataArgs md;
  auto* md_cmd = app.add_subcommand("report-metadata", "Metadata bits: hybrid vs CSR/ELLPACK");
  md_cmd->add_option("--s", md.s, "Rows (output channels)")->required();
  md_cmd->add_option("--k", md.k, "Reduction length")->required();
  md_cmd->add_option("--kprime", md.kprime, "Kept columns per block row")->required();
  md_cmd->add_option("--block", md.block, "Block size")->capture_default_str();
  md_cmd->add_option("--nm", md.nm, "N:M pattern")->capture_default_str();
  md_cmd->add_option("--seed", md.seed, "Seed of the unstructured baseline")->capture_default_str();
  md_cmd->add_option("--out", md.out, "Output directory (optional)");

  SpmmArgs sp;
  auto* sp_cmd = app.add_subcommand("spmm-check", "Compare spmm with the decoded dense product");
  sp_cmd->add_option("--cases", sp.cases, "Random cases")->capture_default_str();
  sp_cmd->add_option("--seed", sp.seed, "Seed")->capture_default_str();
  sp_cmd->add_option("--out", sp.out, "Output directory (optional)");

  SweepArgs sw;
  auto* sw_cmd = app.add_subcommand("perf-sweep", "Latency/energy sweep over sparsity configs");
  sw_cmd->add_option("--hw", sw.hw, "Hardware config JSON");
  sw_cmd->add_option("--layers", sw.layers, "Layer list JSON (default: ResNet-50 like)");
  sw_cmd->add_option("--out", sw.out, "Output directory")->required();

  std::string inspect_file;
  auto* in_cmd = app.add_subcommand("inspect", "Dump a .crsp header and check its invariants");
  in_cmd->add_option("file", inspect_file, ".crsp file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  omp_set_num_threads(threads);
  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*prune_cmd) return cmd_prune(pr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*md_cmd) return cmd_report_metadata(md);
    if (*sp_cmd) return cmd_spmm_check(sp);
    if (*sw_cmd) return cmd_perf_sweep(sw);
    if (*in_cmd) return cmd_inspect(inspect_file);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
