#include "prgcn/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace prgcn {

using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("clip " + path + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("clip " + path + ": invalid JSON: " + e.what());
  }
}

}  // namespace

SkeletonSequence load_kinetics_clip(const std::string& path, Index joints, Index max_persons) {
  json clip = parse_json_file(path);
  if (!clip.is_object() || !clip.contains("data") || !clip["data"].is_array())
    throw std::runtime_error("clip " + path + ": expected an object with a 'data' frame list");

  SkeletonSequence seq;
  seq.joints = joints;
  seq.persons = max_persons;
  seq.semantics = "xy_conf";
  seq.id = std::filesystem::path(path).stem().string();
  if (clip.contains("label_index")) seq.label = clip["label_index"].get<Index>();

  const json& frames = clip["data"];
  Index min_fi = 0, max_fi = -1;
  for (const auto& frame : frames) {
    if (!frame.is_object() || !frame.contains("frame_index") || !frame["frame_index"].is_number_integer())
      throw std::runtime_error("clip " + path + ": frame record without integer frame_index");
    Index fi = frame["frame_index"].get<Index>();
    if (max_fi < min_fi) {
      min_fi = max_fi = fi;
    } else {
      min_fi = std::min(min_fi, fi);
      max_fi = std::max(max_fi, fi);
    }
  }
  seq.frames = max_fi < min_fi ? 1 : max_fi - min_fi + 1;
  seq.values.assign(static_cast<std::size_t>(seq.numel()), 0.0);

  for (const auto& frame : frames) {
    Index fi = frame["frame_index"].get<Index>();
    Index t = fi - min_fi;
    if (!frame.contains("skeleton")) continue;
    const json& persons = frame["skeleton"];
    if (!persons.is_array())
      throw std::runtime_error("clip " + path + ": frame " + std::to_string(fi) + ": skeleton is not a list");

    std::vector<std::pair<double, const json*>> ranked;
    for (const auto& person : persons) {
      if (!person.is_object() || !person.contains("pose") || !person.contains("score"))
        throw std::runtime_error("clip " + path + ": frame " + std::to_string(fi) +
                                 ": person record needs pose and score");
      const json& pose = person["pose"];
      const json& score = person["score"];
      if (!pose.is_array() || static_cast<Index>(pose.size()) != 2 * joints)
        throw std::runtime_error("clip " + path + ": frame " + std::to_string(fi) + ": pose has " +
                                 std::to_string(pose.size()) + " values, expected " + std::to_string(2 * joints));
      if (!score.is_array() || static_cast<Index>(score.size()) != joints)
        throw std::runtime_error("clip " + path + ": frame " + std::to_string(fi) + ": score has " +
                                 std::to_string(score.size()) + " values, expected " + std::to_string(joints));
      double total = 0;
      for (const auto& s : score) total += s.get<double>();
      ranked.emplace_back(total, &person);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    Index keep = std::min<Index>(max_persons, static_cast<Index>(ranked.size()));
    for (Index p = 0; p < keep; ++p) {
      const json& pose = (*ranked[static_cast<std::size_t>(p)].second)["pose"];
      const json& score = (*ranked[static_cast<std::size_t>(p)].second)["score"];
      for (Index n = 0; n < joints; ++n) {
        double x = pose[static_cast<std::size_t>(2 * n)].get<double>();
        double y = pose[static_cast<std::size_t>(2 * n + 1)].get<double>();
        double conf = score[static_cast<std::size_t>(n)].get<double>();
        if (x == 0.0 && y == 0.0 && conf == 0.0) continue;  // missing joint stays zero
        seq.at(p, 0, t, n) = x - 0.5;
        seq.at(p, 1, t, n) = y - 0.5;
        seq.at(p, 2, t, n) = conf;
      }
    }
  }
  return seq;
}

void write_clip_json(const SkeletonSequence& seq, const std::string& path, const std::string& label_name) {
  if (seq.semantics != "xy_conf")
    throw std::invalid_argument("write_clip_json: only xy_conf sequences map onto the clip format");
  json clip;
  clip["label"] = label_name;
  clip["label_index"] = seq.label;
  clip["data"] = json::array();
  for (Index t = 0; t < seq.frames; ++t) {
    json frame;
    frame["frame_index"] = t;
    frame["skeleton"] = json::array();
    for (Index m = 0; m < seq.persons; ++m) {
      bool any = false;
      for (Index n = 0; n < seq.joints && !any; ++n) any = seq.joint_present(m, t, n);
      if (!any) continue;
      json person;
      auto& pose = person["pose"] = json::array();
      auto& score = person["score"] = json::array();
      for (Index n = 0; n < seq.joints; ++n) {
        if (seq.joint_present(m, t, n)) {
          pose.push_back(seq.at(m, 0, t, n) + 0.5);
          pose.push_back(seq.at(m, 1, t, n) + 0.5);
          score.push_back(seq.at(m, 2, t, n));
        } else {
          pose.push_back(0.0);
          pose.push_back(0.0);
          score.push_back(0.0);
        }
      }
      frame["skeleton"].push_back(std::move(person));
    }
    clip["data"].push_back(std::move(frame));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("clip " + path + ": cannot write");
  out << clip.dump() << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest " + path + ": cannot open");
  auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string clip_path;
    long long label;
    if (!(ls >> clip_path)) continue;
    if (!(ls >> label))
      throw std::runtime_error("manifest " + path + ":" + std::to_string(line_no) +
                               ": expected \"clip-path label\"");
    std::filesystem::path p(clip_path);
    if (p.is_relative()) p = base / p;
    entries.push_back({p.string(), static_cast<Index>(label)});
  }
  if (entries.empty()) throw std::runtime_error("manifest " + path + ": no entries");
  return entries;
}

std::vector<SkeletonSequence> load_dataset(const std::string& manifest_path, Index joints, Index max_persons) {
  std::vector<SkeletonSequence> out;
  for (const auto& e : load_manifest(manifest_path)) {
    auto seq = load_kinetics_clip(e.path, joints, max_persons);
    seq.label = e.label;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<double> fit_length(const SkeletonSequence& seq, Index t_fixed, bool train_mode, std::mt19937_64& rng) {
  if (t_fixed < 1) throw std::invalid_argument("fit_length: target length must be positive");
  Index m = seq.persons, c = seq.channels, t_raw = seq.frames, n = seq.joints;
  std::vector<double> out(static_cast<std::size_t>(m * c * t_fixed * n));
  Index start = 0;
  if (t_raw > t_fixed)
    start = train_mode ? std::uniform_int_distribution<Index>(0, t_raw - t_fixed)(rng) : (t_raw - t_fixed) / 2;
  for (Index mi = 0; mi < m; ++mi)
    for (Index ci = 0; ci < c; ++ci)
      for (Index t = 0; t < t_fixed; ++t) {
        Index src = t_raw > t_fixed ? start + t : t % t_raw;
        const double* src_row = &seq.values[static_cast<std::size_t>(((mi * c + ci) * t_raw + src) * n)];
        double* dst_row = &out[static_cast<std::size_t>(((mi * c + ci) * t_fixed + t) * n)];
        std::copy(src_row, src_row + n, dst_row);
      }
  return out;
}

void apply_pose_transform(std::vector<double>& values, Index persons, Index channels, Index frames, Index joints,
                          const std::string& semantics, double theta, double scale,
                          const std::array<double, 3>& shift) {
  bool planar = semantics == "xy_conf";
  double cs = std::cos(theta), sn = std::sin(theta);

  auto at = [&](Index mi, Index ci, Index t, Index n) -> double& {
    return values[static_cast<std::size_t>(((mi * channels + ci) * frames + t) * joints + n)];
  };
  for (Index mi = 0; mi < persons; ++mi)
    for (Index t = 0; t < frames; ++t)
      for (Index n = 0; n < joints; ++n) {
        bool present = false;
        for (Index ci = 0; ci < channels && !present; ++ci) present = at(mi, ci, t, n) != 0.0;
        if (!present) continue;
        double x = at(mi, 0, t, n), y = at(mi, 1, t, n);
        if (planar) {
          at(mi, 0, t, n) = scale * (x * cs - y * sn) + shift[0];
          at(mi, 1, t, n) = scale * (x * sn + y * cs) + shift[1];
        } else {
          double z = at(mi, 2, t, n);
          at(mi, 0, t, n) = scale * (x * cs + z * sn) + shift[0];
          at(mi, 1, t, n) = scale * y + shift[1];
          at(mi, 2, t, n) = scale * (-x * sn + z * cs) + shift[2];
        }
      }
}

void augment_coords(std::vector<double>& values, Index persons, Index channels, Index frames, Index joints,
                    const std::string& semantics, const AugmentParams& params, std::mt19937_64& rng) {
  double theta = std::uniform_real_distribution<double>(-params.rotation_deg, params.rotation_deg)(rng) *
                 std::numbers::pi / 180.0;
  double scale = std::uniform_real_distribution<double>(1.0 - params.scale_delta, 1.0 + params.scale_delta)(rng);
  std::array<double, 3> shift{0, 0, 0};
  Index coord_axes = semantics == "xy_conf" ? 2 : 3;
  for (Index a = 0; a < coord_axes; ++a)
    shift[static_cast<std::size_t>(a)] =
        std::uniform_real_distribution<double>(-params.translate, params.translate)(rng);
  apply_pose_transform(values, persons, channels, frames, joints, semantics, theta, scale, shift);
}

std::vector<std::pair<Index, Index>> chain_edges(Index joints) {
  std::vector<std::pair<Index, Index>> e;
  for (Index i = 0; i + 1 < joints; ++i) e.emplace_back(i, i + 1);
  return e;
}

SyntheticDataset generate_synthetic(Index num_classes, Index samples_per_class, Index joints, Index frames,
                                    unsigned long long seed) {
  if (num_classes < 2 || num_classes > 16)
    throw std::invalid_argument("generate_synthetic: class count must be in [2,16]");
  if (samples_per_class < 1) throw std::invalid_argument("generate_synthetic: need at least one sample per class");
  if (joints < 2) throw std::invalid_argument("generate_synthetic: need at least two joints");
  if (frames < 6) throw std::invalid_argument("generate_synthetic: need at least six frames");

  SyntheticDataset ds;
  ds.joints = joints;
  ds.frames = frames;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.006);
  const double amplitude = 0.24;

  for (Index c = 0; c < num_classes; ++c)
    ds.class_frequency.push_back(SyntheticDataset::base_frequency + SyntheticDataset::frequency_step * c);

  for (Index c = 0; c < num_classes; ++c) {
    double freq = ds.class_frequency[static_cast<std::size_t>(c)];
    // Wave speed along the chain is class-coded too, so classes stay apart
    // under temporal pooling.
    double joint_lag = 0.4 + 0.35 * static_cast<double>(c);
    for (Index s = 0; s < samples_per_class; ++s) {
      SkeletonSequence seq;
      seq.persons = 1;
      seq.channels = 3;
      seq.frames = frames;
      seq.joints = joints;
      seq.semantics = "xy_conf";
      seq.label = c;
      seq.id = "synth_c" + std::to_string(c) + "_s" + std::to_string(s);
      seq.values.assign(static_cast<std::size_t>(seq.numel()), 0.0);
      double phase = phase_dist(rng);
      for (Index t = 0; t < frames; ++t)
        for (Index n = 0; n < joints; ++n) {
          double arg = 2.0 * std::numbers::pi * freq * t / frames + phase + joint_lag * n;
          double x = 0.5 + amplitude * std::sin(arg) + noise(rng);
          double y = 0.2 + 0.6 * static_cast<double>(n) / static_cast<double>(joints - 1) +
                     0.5 * amplitude * std::cos(arg) + noise(rng);
          // recentred in-memory convention, coordinates clamped into the
          // format's normalized [0,1] band before the shift
          seq.at(0, 0, t, n) = std::clamp(x, 0.02, 0.98) - 0.5;
          seq.at(0, 1, t, n) = std::clamp(y, 0.02, 0.98) - 0.5;
          seq.at(0, 2, t, n) = 1.0;
        }
      ds.clips.push_back(std::move(seq));
    }
  }
  return ds;
}

}  // namespace prgcn
