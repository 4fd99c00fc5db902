#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "teb/batch.hpp"
#include "teb/config.hpp"
#include "teb/rng.hpp"

namespace teb {

/// Class-labelled square glyph images in [0, 1].
struct Glyphs {
  Tensor<float> images;  // (N, s, s)
  std::vector<int> labels;
  int num_classes = 0;

  Index count() const { return images.rank() ? images.dim(0) : 0; }
  Index side() const { return images.rank() ? images.dim(1) : 0; }
  /// Per-class mean image, (num_classes, s, s).
  Tensor<float> class_means() const;
};

/// Reads train-images-idx3-ubyte / train-labels-idx1-ubyte style files.
Glyphs load_idx(const std::string& images_path, const std::string& labels_path);
/// `path` is a directory holding the two standard training files.
Glyphs load_digits(const std::string& path);
/// Ten stroke-drawn glyph classes with per-example affine jitter.
Glyphs procedural_glyphs(int per_class, int side, std::uint64_t seed);
/// Bilinear resize of every glyph to side x side.
Glyphs resize_glyphs(const Glyphs& g, int side);

/// Counter-clockwise rotation by `angle` radians about the image center, bilinear sampling.
Tensor<float> rotate_image(const Tensor<float>& img, double angle);

/// The seven ball colors: every RGB triple over {85, 255} except (85, 85, 85).
const std::array<std::array<int, 3>, 7>& color_classes();

/// Closed-form y coordinate of the unit-circle rotation at frequency f, from (x0, y0).
double rotation_y(double x0, double y0, double freq, double t);

/// One split of a generated task.
struct Dataset {
  TaskKind kind = TaskKind::switching_rotation;
  Tensor<float> x_hist, y_hist, y_next;
  std::vector<int> switched, changed, y_class, prev_class, angle;

  Index size() const { return y_next.rows(); }
  StreamBatch<float> batch(const std::vector<Index>& idx) const;
  StreamBatch<float> all() const;
};

struct DatasetBundle {
  TaskConfig cfg;
  Dataset train, val, test;
  Tensor<float> templates;  // rotation task: (K, 8, s, s) class-mean glyphs at each angle
};

Dataset gen_switching_rotation(const TaskConfig& cfg, const Glyphs& glyphs, CounterRng rng, int n);
Dataset gen_needle_haystack(const TaskConfig& cfg, CounterRng rng, int n);
Dataset gen_multi_sinusoids(const TaskConfig& cfg, CounterRng rng, int n);

/// All three splits from independent substreams of cfg.seed.
DatasetBundle generate_dataset(const TaskConfig& cfg);

/// Writes manifest.txt plus train/val/test containers into `dir` (created if needed).
void save_dataset(const DatasetBundle& bundle, const std::string& dir);
DatasetBundle load_dataset(const std::string& dir);

/// Rotation-task templates from a glyph source: (K, 8, s, s).
Tensor<float> rotation_templates(const Glyphs& glyphs, int num_classes);

}  // namespace teb
