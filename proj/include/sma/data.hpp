#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sma/losses.hpp"
#include "sma/random.hpp"
#include "sma/tensor.hpp"

namespace sma {

/// Interleaved H x W x channels pixels in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> pixels;

  static Image filled(std::size_t height, std::size_t width, std::size_t channels, double value);
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

struct Sample {
  Image image;
  std::vector<std::uint8_t> labels;  // multi-label targets, one 0/1 entry per label
  std::size_t class_id = 0;          // multi-class target
  std::size_t subject = 0;
  bool operator==(const Sample&) const = default;
};

struct SynthConfig {
  Task task = Task::kMultiLabel;
  std::size_t image_size = 64;
  std::size_t num_subjects = 12;
  /// Marginal positive rate per label (multi-label). Must hold 12 entries.
  std::vector<double> label_rates{0.30, 0.30, 0.25, 0.25, 0.20, 0.20, 0.15, 0.15, 0.10, 0.10, 0.05, 0.05};
  /// (a, b): b follows a with probability cooccurrence, marginals preserved.
  std::vector<std::pair<std::size_t, std::size_t>> coupled{{0, 1}, {2, 3}};
  double cooccurrence = 0.8;
  std::size_t num_classes = 6;

  void validate() const;
};

inline constexpr std::size_t kSynthLabels = 12;

/// Deterministic per seed. Each label draws a Gaussian blob of its own hue at
/// its own zone on a subject-tinted background; multi-class samples draw the
/// two blobs of their class.
std::vector<Sample> generate_synthetic(std::uint64_t seed, std::size_t n, const SynthConfig& cfg);

/// Zone centre (x, y) of a label on an image of the given size.
std::pair<double, double> label_zone(std::size_t label, std::size_t image_size);

enum class AugmentMode { kAu, kFer };

struct AugmentDraw {
  double angle_deg = 0.0;
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

/// Rotation in [-45, 45] (au) or [-15, 15] (fer) degrees, 50% flip, jitter factors in [0.8, 1.2].
AugmentDraw draw_augment(Rng& rng, AugmentMode mode);

/// Bilinear rotation about the centre with border replication, horizontal
/// flip, then brightness, contrast and saturation; clamped to [0,1].
Image apply_augment(const Image& image, const AugmentDraw& draw);
Image rotate(const Image& image, double angle_deg);
Image flip_horizontal(const Image& image);

Sample augment(const Sample& sample, std::uint64_t seed, AugmentMode mode);

struct ResampleConfig {
  double threshold = 0.0;
  std::size_t max_duplication = 20;

  void validate() const;
};

/// Appends duplicates of positive-bearing samples, label by label in
/// ascending-frequency order, sweeping again while any label is below the
/// threshold and still has a source sample copied fewer than
/// max_duplication times.
/// The input appears unchanged as a prefix of the output.
std::vector<Sample> selective_oversample(const std::vector<Sample>& data, const ResampleConfig& cfg);

/// Same as selective_oversample, returning source indices instead of copies.
std::vector<std::size_t> oversample_indices(const std::vector<Sample>& data, const ResampleConfig& cfg);

/// Positive count per label.
std::vector<std::size_t> label_positives(const std::vector<Sample>& data);

/// k disjoint ascending index lists covering the data. With by_subject every
/// subject lands in exactly one fold.
std::vector<std::vector<std::size_t>> make_folds(const std::vector<Sample>& data, std::size_t k, bool by_subject,
                                                 std::uint64_t seed);

/// Binary P6 (3 channels) or P5 (1 channel), maxval 255.
Image decode_image(const std::string& bytes);
std::string encode_image(const Image& image);
/// Min-max normalized P5; a constant map encodes as all zeros.
std::string encode_heatmap(std::span<const double> map, std::size_t height, std::size_t width);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// Tab-separated manifest: a header line, then one "image  subject  labels" row
/// per sample. labels is a 0/1 string for multi-label data or a class id.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& data, Task task);
std::vector<Sample> read_dataset(const std::filesystem::path& dir, Task task);

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kManifestHeader = "# sma-manifest v1\timage\tsubject\tlabels";

/// [B,3,H,W] image tensor for the given samples.
Tensor batch_images(const std::vector<Sample>& data, std::span<const std::size_t> indices);
Targets batch_targets(const std::vector<Sample>& data, std::span<const std::size_t> indices, Task task);

}  // namespace sma
