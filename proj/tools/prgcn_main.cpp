// Command-line front end: train, eval, infer, refine, count, synth.
// Exit codes: 0 ok, 2 usage or configuration error, 3 numerical failure.

#include "prgcn/checkpoint.hpp"
#include "prgcn/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prgcn;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;  // <0: keep config value
  bool json_output = false;
};

struct LoadedConfig {
  ModelConfig model;
  TrainConfig train;
};

LoadedConfig resolve_config(const CommonArgs& args) {
  KeyValues kv = args.config_path.empty() ? KeyValues{} : load_config_file(args.config_path);
  apply_overrides(kv, args.overrides);
  if (args.seed >= 0) {
    kv["init_seed"] = std::to_string(args.seed);
    kv["train.seed"] = std::to_string(args.seed);
  }
  LoadedConfig lc;
  lc.model = model_config_from(kv);
  lc.train = train_config_from(kv);
  reject_unknown_keys(kv);
  return lc;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_json) {
  cmd->add_option("--config", args.config_path, "configuration file (key = value lines)");
  cmd->add_option("--set", args.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "seed for init, shuffling, and augmentation");
  if (with_json) cmd->add_flag("--json", args.json_output, "machine-readable output");
}

// Batch (1, M, C, T, N) from a single clip at its native length.
Tensor<float> clip_batch(const SkeletonSequence& seq) {
  ArrayX<float> v(seq.numel());
  for (Index i = 0; i < seq.numel(); ++i) v[i] = static_cast<float>(seq.values[static_cast<std::size_t>(i)]);
  return Tensor<float>({1, seq.persons, seq.channels, seq.frames, seq.joints}, std::move(v));
}

int cmd_train(const CommonArgs& args, const std::string& manifest, const std::string& out_dir) {
  auto lc = resolve_config(args);
  PrGcnModel<float> model(lc.model);
  auto dataset = load_dataset(manifest, model.skeleton().num_joints, lc.model.persons);
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "metrics.log");
  if (!log) throw std::runtime_error("train: cannot write to " + out_dir);
  auto metrics = train_model(model, dataset, lc.train, &log);
  std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  save_model(model, ckpt);
  std::cout << "trained " << lc.train.epochs << " epochs on " << dataset.size() << " clips\n"
            << "final loss " << metrics.loss << "  top1 " << metrics.top1 << "  top5 " << metrics.top5 << "\n"
            << "checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& manifest, const std::string& ckpt) {
  auto lc = resolve_config(args);
  PrGcnModel<float> model(lc.model);
  load_model(model, ckpt);
  auto dataset = load_dataset(manifest, model.skeleton().num_joints, lc.model.persons);
  auto metrics = evaluate_model(model, dataset, lc.train.batch_size);
  if (args.json_output) {
    json out{{"clips", dataset.size()}, {"loss", metrics.loss}, {"top1", metrics.top1}, {"top5", metrics.top5}};
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "clips " << dataset.size() << "  loss " << metrics.loss << "  top1 " << metrics.top1 << "  top5 "
              << metrics.top5 << "\n";
  }
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& clip_path, const std::string& ckpt) {
  auto lc = resolve_config(args);
  PrGcnModel<float> model(lc.model);
  load_model(model, ckpt);
  auto seq = load_kinetics_clip(clip_path, model.skeleton().num_joints, lc.model.persons);
  std::mt19937_64 rng(0);
  std::vector<const SkeletonSequence*> samples{&seq};
  auto x = prgcn::detail::assemble_batch<float>(samples, lc.model, model.skeleton().num_joints,
                                                /*train_mode=*/false, nullptr, rng);
  auto probs = model.forward(x, /*training=*/false);
  Index k = std::min<Index>(5, lc.model.num_classes);
  const auto& p = probs.value();
  std::vector<Index> order(static_cast<std::size_t>(lc.model.num_classes));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return p[a] > p[b]; });
  json out = json::array();
  for (Index i = 0; i < k; ++i)
    out.push_back({{"class", order[static_cast<std::size_t>(i)]}, {"prob", p[order[static_cast<std::size_t>(i)]]}});
  if (args.json_output) {
    std::cout << out.dump(2) << "\n";
  } else {
    for (const auto& row : out)
      std::cout << "class " << row["class"].get<Index>() << "  prob " << row["prob"].get<double>() << "\n";
  }
  return 0;
}

int cmd_refine(const CommonArgs& args, const std::string& clip_path, const std::string& ckpt,
               const std::string& out_path) {
  auto lc = resolve_config(args);
  PrGcnModel<float> model(lc.model);
  load_model(model, ckpt);
  auto seq = load_kinetics_clip(clip_path, model.skeleton().num_joints, lc.model.persons);
  auto input = clip_batch(seq);
  auto refined = model.refine(input, /*training=*/false);

  // Reconstruct output coordinates as original + float32 offset so an
  // identity refinement reproduces the input file's values exactly.
  SkeletonSequence out = seq;
  const auto& in_v = input.value();
  const auto& re_v = refined.value();
  for (Index m = 0; m < seq.persons; ++m)
    for (Index t = 0; t < seq.frames; ++t)
      for (Index n = 0; n < seq.joints; ++n) {
        if (!seq.joint_present(m, t, n)) continue;
        for (Index c = 0; c < 2; ++c) {
          Index i = ((m * seq.channels + c) * seq.frames + t) * seq.joints + n;
          out.at(m, c, t, n) = seq.at(m, c, t, n) + static_cast<double>(re_v[i] - in_v[i]);
        }
      }
  std::string label_name = "refined";
  write_clip_json(out, out_path, label_name);
  std::cout << "refined clip written to " << out_path << "\n";
  return 0;
}

int cmd_count(const CommonArgs& args) {
  auto lc = resolve_config(args);
  Index joints = resolve_topology(lc.model.topology).num_joints;
  ModelCost cost = count_model(lc.model, joints);
  Index m = lc.model.persons;
  auto flops = [](const BlockCost& b) { return 2 * b.macs; };
  if (args.json_output) {
    json out;
    auto block = [&](const char* name, const BlockCost& b) {
      out[name] = {{"params", b.params}, {"macs", b.macs}, {"flops", flops(b)}};
    };
    block("prm", cost.prm);
    block("gfm", cost.gfm);
    block("tam", cost.tam);
    block("head", cost.head);
    block("total", cost.total());
    out["persons"] = m;
    out["total_flops_all_persons"] = flops(cost.total()) * m;
    std::cout << out.dump(2) << "\n";
  } else {
    auto row = [&](const char* name, const BlockCost& b) {
      std::cout << name << "\t" << b.params << "\t" << b.macs << "\t" << flops(b) << "\n";
    };
    std::cout << "block\tparams\tmacs\tflops (per person stream)\n";
    row("prm", cost.prm);
    row("gfm", cost.gfm);
    row("tam", cost.tam);
    row("head", cost.head);
    row("total", cost.total());
    std::cout << "total flops x " << m << " persons: " << flops(cost.total()) * m << "\n";
  }
  return 0;
}

int cmd_synth(Index classes, Index samples, Index joints, Index frames, long long seed, const std::string& out_dir) {
  if (frames % 6 != 0) throw std::invalid_argument("synth: frames must be a multiple of 6");
  auto ds = generate_synthetic(classes, samples, joints, frames,
                               static_cast<unsigned long long>(seed < 0 ? 1 : seed));
  fs::path dir(out_dir);
  fs::create_directories(dir / "clips");

  std::ofstream topo(dir / "topology.txt");
  topo << joints << " 0\n";
  for (auto [a, b] : chain_edges(joints)) topo << a << " " << b << "\n";
  topo.close();

  std::ofstream manifest(dir / "manifest.txt");
  for (const auto& clip : ds.clips) {
    std::string rel = "clips/" + clip.id + ".json";
    write_clip_json(clip, (dir / rel).string(), "class_" + std::to_string(clip.label));
    manifest << rel << " " << clip.label << "\n";
  }
  manifest.close();

  ModelConfig mc;
  mc.topology = fs::absolute(dir / "topology.txt").string();
  mc.num_classes = classes;
  mc.frames = frames;
  mc.persons = 1;
  mc.prm_hidden = 8;
  mc.gfm_width = 8;
  mc.tam_reduction = 4;
  TrainConfig tc;
  tc.epochs = 60;
  tc.augment = {0.0, 0.0, 0.0};
  std::ofstream config(dir / "config.txt");
  config << render_config(mc, tc);
  config.close();

  std::cout << "wrote " << ds.clips.size() << " clips, manifest.txt, topology.txt, config.txt under " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skeleton action recognition with pose refinement"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, infer_args, refine_args, count_args;
  std::string train_manifest, train_out;
  std::string eval_manifest, eval_ckpt;
  std::string infer_clip, infer_ckpt;
  std::string refine_clip, refine_ckpt, refine_out;
  Index synth_classes = 5, synth_samples = 10, synth_joints = 6, synth_frames = 48;
  long long synth_seed = 1;
  std::string synth_out;

  auto* train = app.add_subcommand("train", "train a model on a manifest");
  add_common(train, train_args, false);
  train->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "output directory for checkpoint and metrics log")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval, eval_args, true);
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  auto* infer = app.add_subcommand("infer", "classify a single clip");
  add_common(infer, infer_args, true);
  infer->add_option("--clip", infer_clip, "clip file")->required();
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();

  auto* refine = app.add_subcommand("refine", "write the refined poses for a clip");
  add_common(refine, refine_args, false);
  refine->add_option("--clip", refine_clip, "clip file")->required();
  refine->add_option("--checkpoint", refine_ckpt, "checkpoint file")->required();
  refine->add_option("--out", refine_out, "output clip file")->required();

  auto* count = app.add_subcommand("count", "report parameters and FLOPs per block");
  add_common(count, count_args, true);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--classes", synth_classes, "number of classes (2..16)");
  synth->add_option("--samples", synth_samples, "samples per class");
  synth->add_option("--joints", synth_joints, "chain skeleton joints");
  synth->add_option("--frames", synth_frames, "frames per clip (multiple of 6)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_args, train_manifest, train_out);
    if (eval->parsed()) return cmd_eval(eval_args, eval_manifest, eval_ckpt);
    if (infer->parsed()) return cmd_infer(infer_args, infer_clip, infer_ckpt);
    if (refine->parsed()) return cmd_refine(refine_args, refine_clip, refine_ckpt, refine_out);
    if (count->parsed()) return cmd_count(count_args);
    if (synth->parsed()) return cmd_synth(synth_classes, synth_samples, synth_joints, synth_frames, synth_seed, synth_out);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
