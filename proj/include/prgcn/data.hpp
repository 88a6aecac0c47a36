#pragma once

#include "prgcn/config.hpp"
#include "prgcn/graph.hpp"

#include <array>
#include <random>
#include <string>
#include <vector>

// Skeleton-sequence ingestion and preprocessing. In-memory coordinates are
// recentred (file-format x, y minus 0.5); missing joints are all-zero triples
// and stay that way through every transform.

namespace prgcn {

struct SkeletonSequence {
  Index persons = 1, channels = 3, frames = 1, joints = 0;  // (M, C, T_raw, N)
  std::vector<double> values;                               // row-major (M, C, T, N)
  std::string semantics = "xy_conf";
  Index label = -1;
  std::string id;

  Index numel() const { return persons * channels * frames * joints; }
  double& at(Index m, Index c, Index t, Index n) {
    return values[static_cast<std::size_t>(((m * channels + c) * frames + t) * joints + n)];
  }
  double at(Index m, Index c, Index t, Index n) const {
    return values[static_cast<std::size_t>(((m * channels + c) * frames + t) * joints + n)];
  }
  bool joint_present(Index m, Index t, Index n) const {
    for (Index c = 0; c < channels; ++c)
      if (at(m, c, t, n) != 0.0) return true;
    return false;
  }
};

// Clip file: one JSON object with label, label_index, and data = frames, each
// holding frame_index and skeleton = persons with pose [x0,y0,...] and score
// arrays. Keeps the max_persons highest-confidence persons per frame.
SkeletonSequence load_kinetics_clip(const std::string& path, Index joints, Index max_persons = 2);

// Inverse of the loader for xy_conf sequences (writes x, y shifted back by
// +0.5). Persons with no present joint in a frame are omitted from it.
void write_clip_json(const SkeletonSequence& seq, const std::string& path, const std::string& label_name);

struct ManifestEntry {
  std::string path;  // resolved relative to the manifest file
  Index label = -1;
};

// Newline-delimited "clip-path label" pairs, '#' comments allowed.
std::vector<ManifestEntry> load_manifest(const std::string& path);

std::vector<SkeletonSequence> load_dataset(const std::string& manifest_path, Index joints, Index max_persons = 2);

// Fixed-length (M, C, T, N) view: random window (train) or centered window
// (eval) when the clip is longer, loop padding when shorter.
std::vector<double> fit_length(const SkeletonSequence& seq, Index t_fixed, bool train_mode, std::mt19937_64& rng);

// Rotation (radians) / uniform scale / translation applied to the coordinate
// channels of present joints only. xy_conf rotates in-plane and never touches
// confidence; xyz rotates about the vertical axis.
void apply_pose_transform(std::vector<double>& values, Index persons, Index channels, Index frames, Index joints,
                          const std::string& semantics, double theta, double scale,
                          const std::array<double, 3>& shift);

// One random transform per clip, parameters drawn uniformly from the ranges
// in AugmentParams (rotation, then scale, then per-axis shifts).
void augment_coords(std::vector<double>& values, Index persons, Index channels, Index frames, Index joints,
                    const std::string& semantics, const AugmentParams& params, std::mt19937_64& rng);

std::vector<std::pair<Index, Index>> chain_edges(Index joints);

struct SyntheticDataset {
  std::vector<SkeletonSequence> clips;   // grouped by class, S per class
  std::vector<double> class_frequency;   // oscillation cycles per clip
  Index joints = 0, frames = 0;

  static constexpr double base_frequency = 1.0;
  static constexpr double frequency_step = 2.0;
};

// Desk-scale frequency-coded action set over a chain skeleton: class c sways
// with base_frequency + c * frequency_step cycles per clip plus noise, so
// classes are separable by motion statistics alone.
SyntheticDataset generate_synthetic(Index num_classes, Index samples_per_class, Index joints, Index frames,
                                    unsigned long long seed);

}  // namespace prgcn
