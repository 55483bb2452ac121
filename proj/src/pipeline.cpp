// SPDX-License-Identifier: Apache-2.0
#include "crisp/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "crisp/binary_io.hpp"
#include "crisp/hybrid_format.hpp"

namespace crisp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw UsageError(where + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(where + "." + key + ": " + e.what());
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  check_keys(j, {"seed", "data", "model", "train", "finetune_epochs", "profile", "schedule", "prune"},
             "config");
  read_opt(j, "seed", cfg.seed, "config");
  read_opt(j, "finetune_epochs", cfg.finetune_epochs, "config");
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"classes", "dim", "per_class", "noise"}, "data");
    read_opt(d, "classes", cfg.data.classes, "data");
    read_opt(d, "dim", cfg.data.dim, "data");
    read_opt(d, "per_class", cfg.data.per_class, "data");
    read_opt(d, "noise", cfg.data.noise, "data");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, {"hidden"}, "model");
    read_opt(m, "hidden", cfg.hidden, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"epochs", "lr", "momentum", "weight_decay", "batch"}, "train");
    read_opt(t, "epochs", cfg.train.epochs, "train");
    read_opt(t, "lr", cfg.train.lr, "train");
    read_opt(t, "momentum", cfg.train.momentum, "train");
    read_opt(t, "weight_decay", cfg.train.weight_decay, "train");
    read_opt(t, "batch", cfg.train.batch, "train");
  }
  if (j.contains("profile")) {
    const auto& p = j["profile"];
    check_keys(p, {"u_c", "h_per_class"}, "profile");
    read_opt(p, "u_c", cfg.profile.u_c, "profile");
    read_opt(p, "h_per_class", cfg.profile.h_per_class, "profile");
  }
  bool explicit_iterations = false;
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, {"nm", "kappa_target", "delta", "iterations", "fine_tune_epochs", "saliency_epochs"},
               "schedule");
    if (s.contains("nm")) {
      std::string nm;
      read_opt(s, "nm", nm, "schedule");
      try {
        cfg.schedule.nm = NmConfig::parse(nm);
      } catch (const ArgumentError& e) {
        throw UsageError(std::string("schedule.nm: ") + e.what());
      }
    }
    read_opt(s, "kappa_target", cfg.schedule.kappa_target, "schedule");
    read_opt(s, "delta", cfg.schedule.delta, "schedule");
    explicit_iterations = s.contains("iterations");
    read_opt(s, "iterations", cfg.schedule.iterations, "schedule");
    read_opt(s, "fine_tune_epochs", cfg.schedule.fine_tune_epochs, "schedule");
    read_opt(s, "saliency_epochs", cfg.schedule.saliency_epochs, "schedule");
  }
  if (!explicit_iterations && cfg.schedule.delta > 0.0) {
    cfg.schedule.iterations = PruneSchedule::iterations_needed(
        cfg.schedule.nm, cfg.schedule.kappa_target, cfg.schedule.delta);
  }
  if (j.contains("prune")) {
    const auto& p = j["prune"];
    check_keys(p, {"block", "lr", "momentum", "weight_decay", "batch"}, "prune");
    read_opt(p, "block", cfg.prune.block, "prune");
    read_opt(p, "lr", cfg.prune.lr, "prune");
    read_opt(p, "momentum", cfg.prune.momentum, "prune");
    read_opt(p, "weight_decay", cfg.prune.weight_decay, "prune");
    read_opt(p, "batch", cfg.prune.batch, "prune");
  }
  try {
    cfg.schedule.validate();
    cfg.profile.validate(cfg.data.classes);
    validate_config(cfg.schedule.nm, BlockConfig{cfg.prune.block});
  } catch (const ArgumentError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  return json{
      {"seed", cfg.seed},
      {"data",
       {{"classes", cfg.data.classes},
        {"dim", cfg.data.dim},
        {"per_class", cfg.data.per_class},
        {"noise", cfg.data.noise}}},
      {"model", {{"hidden", cfg.hidden}}},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"lr", cfg.train.lr},
        {"momentum", cfg.train.momentum},
        {"weight_decay", cfg.train.weight_decay},
        {"batch", cfg.train.batch}}},
      {"finetune_epochs", cfg.finetune_epochs},
      {"profile", {{"u_c", cfg.profile.u_c}, {"h_per_class", cfg.profile.h_per_class}}},
      {"schedule",
       {{"nm", cfg.schedule.nm.to_string()},
        {"kappa_target", cfg.schedule.kappa_target},
        {"delta", cfg.schedule.delta},
        {"iterations", cfg.schedule.iterations},
        {"fine_tune_epochs", cfg.schedule.fine_tune_epochs},
        {"saliency_epochs", cfg.schedule.saliency_epochs}}},
      {"prune",
       {{"block", cfg.prune.block},
        {"lr", cfg.prune.lr},
        {"momentum", cfg.prune.momentum},
        {"weight_decay", cfg.prune.weight_decay},
        {"batch", cfg.prune.batch}}},
  };
}

void apply_seed_override(ExperimentConfig& cfg) {
  if (const char* env = std::getenv("CRISP_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::logic_error&) {
      throw UsageError(std::string("CRISP_SEED is not an unsigned integer: ") + env);
    }
  }
}

namespace {
json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}
}  // namespace

ExperimentConfig load_experiment_config(const fs::path& path) {
  json j = read_json_file(path);
  if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
  auto cfg = config_from_json(j);
  apply_seed_override(cfg);
  return cfg;
}

HwConfig hw_from_json(const json& j) {
  HwConfig hw;
  check_keys(j, {"mac_lanes", "smem_bytes", "smem_bandwidth", "dram_bandwidth", "energy_per_mac",
                 "energy_per_smem_byte", "energy_per_dram_byte", "element_bytes"},
             "hw");
  read_opt(j, "mac_lanes", hw.mac_lanes, "hw");
  read_opt(j, "smem_bytes", hw.smem_bytes, "hw");
  read_opt(j, "smem_bandwidth", hw.smem_bandwidth, "hw");
  read_opt(j, "dram_bandwidth", hw.dram_bandwidth, "hw");
  read_opt(j, "energy_per_mac", hw.energy_per_mac, "hw");
  read_opt(j, "energy_per_smem_byte", hw.energy_per_smem_byte, "hw");
  read_opt(j, "energy_per_dram_byte", hw.energy_per_dram_byte, "hw");
  read_opt(j, "element_bytes", hw.element_bytes, "hw");
  try {
    hw.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  return hw;
}

json hw_to_json(const HwConfig& hw) {
  return json{{"mac_lanes", hw.mac_lanes},
              {"smem_bytes", hw.smem_bytes},
              {"smem_bandwidth", hw.smem_bandwidth},
              {"dram_bandwidth", hw.dram_bandwidth},
              {"energy_per_mac", hw.energy_per_mac},
              {"energy_per_smem_byte", hw.energy_per_smem_byte},
              {"energy_per_dram_byte", hw.energy_per_dram_byte},
              {"element_bytes", hw.element_bytes}};
}

std::vector<LayerShape> layers_from_json(const json& j) {
  if (!j.is_array()) throw UsageError("layers: expected a JSON array");
  std::vector<LayerShape> out;
  for (const auto& item : j) {
    check_keys(item, {"name", "batch", "s", "k"}, "layers[]");
    LayerShape l;
    read_opt(item, "name", l.name, "layers[]");
    read_opt(item, "batch", l.batch, "layers[]");
    read_opt(item, "s", l.s, "layers[]");
    read_opt(item, "k", l.k, "layers[]");
    if (l.batch == 0 || l.s == 0 || l.k == 0) throw UsageError("layers[]: dims must be >= 1");
    out.push_back(std::move(l));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.data = gen_synthetic(cfg.data.classes, cfg.data.dim, cfg.data.per_class, cfg.seed,
                           cfg.data.noise);
  res.pretrained = make_mlp(cfg.data.dim, cfg.hidden, cfg.data.classes, cfg.seed + 1);
  TrainOptions pre = cfg.train;
  pre.seed = cfg.seed + 2;
  res.pretrain_curve = train(res.pretrained, res.data.train_x, res.data.train_y, pre);

  res.dense_finetuned = res.pretrained;
  const auto uc = select_classes(res.data.train_x, res.data.train_y, cfg.profile.u_c);
  if (cfg.finetune_epochs > 0) {
    TrainOptions ft{cfg.finetune_epochs, cfg.prune.lr, cfg.prune.momentum, cfg.prune.weight_decay,
                    cfg.prune.batch, cfg.seed + 3};
    train(res.dense_finetuned, uc.x, uc.y, ft);
  }
  res.dense_acc_uc = evaluate(res.dense_finetuned, res.data, cfg.profile.u_c);

  PruneOptions po = cfg.prune;
  po.seed = cfg.seed + 4;
  res.pruned = prune_model(res.dense_finetuned, res.data, cfg.schedule, cfg.profile, po);
  res.pruned_acc_uc = evaluate(res.pruned.model, res.data, cfg.profile.u_c);
  return res;
}

std::string prune_report_csv(const std::vector<IterationReport>& reports) {
  std::ostringstream os;
  os << "iteration,kappa_p,measured_sparsity,loss,acc_uc,per_layer_sparsity\n";
  for (const auto& r : reports) {
    std::string layers = "[";
    for (std::size_t i = 0; i < r.layer_sparsity.size(); ++i) {
      if (i) layers += ",";
      layers += fmt_double(r.layer_sparsity[i]);
    }
    layers += "]";
    os << r.iteration << ',' << fmt_double(r.kappa_p) << ',' << fmt_double(r.measured_sparsity)
       << ',' << fmt_double(r.loss) << ',' << fmt_double(r.acc_uc) << ",\"" << layers << "\"\n";
  }
  return os.str();
}

std::string train_curve_csv(const std::vector<EpochRecord>& curve) {
  std::ostringstream os;
  os << "epoch,mean_loss\n";
  for (const auto& e : curve) os << e.epoch << ',' << fmt_double(e.mean_loss) << '\n';
  return os.str();
}

json make_manifest(const std::string& command, std::uint64_t seed, const json& config,
                   const std::vector<std::string>& outputs) {
  return json{{"tool", "crisp"},
              {"version", kToolVersion},
              {"command", command},
              {"seed", seed},
              {"config", config},
              {"formats", {{"crsp", 1}, {"model", 1}, {"dataset", 1}}},
              {"outputs", outputs}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& manifest) {
  write_text(out_dir / (command + ".manifest.json"), manifest.dump(2) + "\n");
}

ExperimentResult run_prune_to_dir(const ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto res = run_experiment(cfg);
  std::vector<std::string> outputs{"dataset.bin", "pretrained.bin", "dense_ft.bin", "final.bin",
                                   "train_curve.csv", "prune_report.csv"};
  save_dataset((out_dir / "dataset.bin").string(), res.data);
  save_model((out_dir / "pretrained.bin").string(), res.pretrained);
  save_model((out_dir / "dense_ft.bin").string(), res.dense_finetuned);
  save_model((out_dir / "final.bin").string(), res.pruned.model);
  write_text(out_dir / "train_curve.csv", train_curve_csv(res.pretrain_curve));
  write_text(out_dir / "prune_report.csv", prune_report_csv(res.pruned.iterations));
  const BlockConfig block{cfg.prune.block};
  for (std::size_t l = 0; l < res.pruned.model.layers.size(); ++l) {
    const auto& L = res.pruned.model.layers[l];
    if (!L.prunable) continue;
    const std::string name = "layer" + std::to_string(l) + ".crsp";
    write_crsp((out_dir / name).string(), encode(L.weights, L.mask, cfg.schedule.nm, block));
    outputs.push_back(name);
  }
  auto manifest = make_manifest("prune", cfg.seed, config_to_json(cfg), outputs);
  manifest["results"] = {{"dense_acc_uc", res.dense_acc_uc},
                         {"pruned_acc_uc", res.pruned_acc_uc},
                         {"measured_sparsity", measured_sparsity(res.pruned.model)}};
  write_manifest(out_dir, "prune", manifest);
  return res;
}

std::vector<std::uint32_t> parse_class_list(const std::string& text) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::logic_error&) {
      throw UsageError("class list: \"" + item + "\" is not a class id");
    }
  }
  if (out.empty()) throw UsageError("class list is empty");
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) {
    throw UsageError("class list has duplicates");
  }
  return out;
}

bool inspect_crsp(const fs::path& path, std::string& dump, std::string& error) {
  std::ostringstream os;
  try {
    const auto bytes = io::read_file(path.string());
    os << "file: " << path.string() << "\nbytes: " << bytes.size() << '\n';
    io::ByteReader hdr(bytes, "crsp");
    hdr.expect_magic("CRSP");
    const auto version = hdr.u32();
    const auto rows = hdr.u32();
    const auto cols = hdr.u32();
    const auto b = hdr.u16();
    const auto n = hdr.u8();
    const auto m = hdr.u8();
    const auto kept = hdr.u32();
    os << "version: " << version << "\nrows: " << rows << "\ncols: " << cols << "\nblock: " << b
       << "\nnm: " << unsigned(n) << ':' << unsigned(m) << "\nkept_cols_per_blockrow: " << kept
       << '\n';
    const auto h = deserialize(bytes);
    os << "values: " << h.values.size() << "\nblock_indices: " << h.block_col_indices.size()
       << "\noverall_sparsity: "
       << fmt_double(h.cols ? overall_sparsity(h.cols, h.kept_cols(), h.nm) : 1.0)
       << "\ninvariants: ok\n";
    dump = os.str();
    return true;
  } catch (const Error& e) {
    dump = os.str();
    error = e.what();
    return false;
  }
}

}  // namespace crisp
