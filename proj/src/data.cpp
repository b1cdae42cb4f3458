#include "sma/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace sma {

Image Image::filled(std::size_t height, std::size_t width, std::size_t channels, double value) {
  Image img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(height * width * channels, value);
  return img;
}

void SynthConfig::validate() const {
  if (image_size < 16) throw ConfigError("synth: image_size must be >= 16");
  if (num_subjects == 0) throw ConfigError("synth: num_subjects must be >= 1");
  if (task == Task::kMultiLabel) {
    if (label_rates.size() != kSynthLabels) throw ConfigError("synth: expected 12 label rates");
    for (double r : label_rates) {
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("synth: label rates must lie in [0,1)");
    }
    for (auto [a, b] : coupled) {
      if (a >= kSynthLabels || b >= kSynthLabels || a == b) throw ConfigError("synth: bad coupled pair");
      if (label_rates[b] < cooccurrence * label_rates[a]) {
        throw ConfigError("synth: rate of label " + std::to_string(b) + " too low for its coupling");
      }
    }
    if (!(cooccurrence >= 0.0 && cooccurrence <= 1.0)) throw ConfigError("synth: cooccurrence must be in [0,1]");
  } else if (num_classes == 0 || 2 * num_classes > kSynthLabels) {
    throw ConfigError("synth: num_classes must be in [1, 6]");
  }
}

std::pair<double, double> label_zone(std::size_t label, std::size_t image_size) {
  // 4 columns x 3 rows inside the central disc, so rotations keep blobs in frame.
  const double s = static_cast<double>(image_size) / 64.0;
  static constexpr double xs[4] = {17.0, 27.0, 37.0, 47.0};
  static constexpr double ys[3] = {19.0, 32.0, 45.0};
  return {xs[label % 4] * s, ys[(label / 4) % 3] * s};
}

namespace {

std::array<double, 3> hue_color(std::size_t label) {
  const double h = static_cast<double>(label % kSynthLabels) / static_cast<double>(kSynthLabels) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

void draw_blob(Image& img, std::size_t label, Rng& rng) {
  auto [cx, cy] = label_zone(label, img.height);
  const double s = static_cast<double>(img.height) / 64.0;
  cx += rng.uniform(-1.5, 1.5) * s;
  cy += rng.uniform(-1.5, 1.5) * s;
  const double sigma = rng.uniform(2.5, 3.5) * s;
  const double amp = rng.uniform(0.8, 1.0);
  const auto color = hue_color(label);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double g = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      if (g < 1e-4) continue;
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (1.0 - g) * img.at(y, x, c) + g * color[c];
    }
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::vector<Sample> generate_synthetic(std::uint64_t seed, std::size_t n, const SynthConfig& cfg) {
  if (n == 0) throw ConfigError("generate_synthetic: n must be > 0");
  cfg.validate();
  // Subject background tints are fixed per seed.
  Rng subject_rng(derive_seed(seed, "subjects"));
  std::vector<std::array<double, 3>> tints(cfg.num_subjects);
  for (auto& t : tints) {
    const double base = subject_rng.uniform(0.35, 0.55);
    for (auto& c : t) c = base + subject_rng.uniform(-0.05, 0.05);
  }
  std::map<std::size_t, std::size_t> partner_of;
  for (auto [a, b] : cfg.coupled) partner_of[b] = a;

  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "sample", i));
    Sample s;
    s.subject = rng.index(cfg.num_subjects);
    s.image = Image::filled(cfg.image_size, cfg.image_size, 3, 0.0);
    for (std::size_t p = 0; p < s.image.height * s.image.width; ++p) {
      for (std::size_t c = 0; c < 3; ++c) s.image.pixels[p * 3 + c] = tints[s.subject][c];
    }
    std::vector<std::size_t> blobs;
    if (cfg.task == Task::kMultiLabel) {
      s.labels.assign(kSynthLabels, 0);
      for (std::size_t l = 0; l < kSynthLabels; ++l) {
        double rate = cfg.label_rates[l];
        if (auto it = partner_of.find(l); it != partner_of.end()) {
          const double ra = cfg.label_rates[it->second];
          rate = s.labels[it->second] ? cfg.cooccurrence
                                      : (cfg.label_rates[l] - cfg.cooccurrence * ra) / (1.0 - ra);
        }
        s.labels[l] = rng.bernoulli(rate) ? 1 : 0;
        if (s.labels[l]) blobs.push_back(l);
      }
    } else {
      s.class_id = rng.index(cfg.num_classes);
      blobs = {2 * s.class_id, 2 * s.class_id + 1};
    }
    for (auto l : blobs) draw_blob(s.image, l, rng);
    for (auto& v : s.image.pixels) v = clamp01(v + rng.uniform(-0.03, 0.03));
    out.push_back(std::move(s));
  }
  return out;
}

AugmentDraw draw_augment(Rng& rng, AugmentMode mode) {
  const double max_angle = mode == AugmentMode::kAu ? 45.0 : 15.0;
  AugmentDraw d;
  d.angle_deg = rng.uniform(-max_angle, max_angle);
  d.flip = rng.bernoulli(0.5);
  d.brightness = rng.uniform(0.8, 1.2);
  d.contrast = rng.uniform(0.8, 1.2);
  d.saturation = rng.uniform(0.8, 1.2);
  return d;
}

Image rotate(const Image& image, double angle_deg) {
  if (angle_deg == 0.0) return image;
  Image out = image;
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double maxx = static_cast<double>(image.width) - 1.0, maxy = static_cast<double>(image.height) - 1.0;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      // inverse map: destination pixel back into the source
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = std::clamp(cx + ca * dx + sa * dy, 0.0, maxx);
      const double sy = std::clamp(cy - sa * dx + ca * dy, 0.0, maxy);
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1.0 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c);
        const double bot = (1.0 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c);
        out.at(y, x, c) = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
    }
  }
  return out;
}

Image apply_augment(const Image& image, const AugmentDraw& draw) {
  Image out = rotate(image, draw.angle_deg);
  if (draw.flip) out = flip_horizontal(out);
  const std::size_t pixels = out.height * out.width;
  const bool color = out.channels == 3;
  auto gray_of = [&](std::size_t p) {
    if (!color) return out.pixels[p];
    return 0.299 * out.pixels[p * 3] + 0.587 * out.pixels[p * 3 + 1] + 0.114 * out.pixels[p * 3 + 2];
  };
  if (draw.brightness != 1.0) {
    for (auto& v : out.pixels) v *= draw.brightness;
  }
  if (draw.contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) mean += gray_of(p);
    mean /= static_cast<double>(pixels);
    for (auto& v : out.pixels) v = mean + draw.contrast * (v - mean);
  }
  if (draw.saturation != 1.0 && color) {
    for (std::size_t p = 0; p < pixels; ++p) {
      const double g = gray_of(p);
      for (std::size_t c = 0; c < 3; ++c) out.pixels[p * 3 + c] = g + draw.saturation * (out.pixels[p * 3 + c] - g);
    }
  }
  for (auto& v : out.pixels) v = clamp01(v);
  return out;
}

Sample augment(const Sample& sample, std::uint64_t seed, AugmentMode mode) {
  Rng rng(seed);
  Sample out = sample;
  out.image = apply_augment(sample.image, draw_augment(rng, mode));
  return out;
}

void ResampleConfig::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("resample: threshold must be in [0,1]");
}

std::vector<std::size_t> label_positives(const std::vector<Sample>& data) {
  std::vector<std::size_t> pos;
  for (const auto& s : data) {
    if (pos.empty()) pos.assign(s.labels.size(), 0);
    if (s.labels.size() != pos.size()) throw DataError("label_positives: inconsistent label vector lengths");
    for (std::size_t l = 0; l < pos.size(); ++l) pos[l] += s.labels[l];
  }
  return pos;
}

std::vector<std::size_t> oversample_indices(const std::vector<Sample>& data, const ResampleConfig& cfg) {
  if (data.empty()) throw DataError("selective_oversample: empty dataset");
  cfg.validate();
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto counts = label_positives(data);
  const std::size_t num_labels = counts.size();

  std::vector<std::size_t> by_freq(num_labels);
  for (std::size_t l = 0; l < num_labels; ++l) by_freq[l] = l;
  std::stable_sort(by_freq.begin(), by_freq.end(), [&](auto a, auto b) { return counts[a] < counts[b]; });

  std::vector<std::vector<std::size_t>> sources(num_labels);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t l = 0; l < num_labels; ++l) {
      if (data[i].labels[l]) sources[l].push_back(i);
    }
  }
  std::vector<std::size_t> copies(data.size(), 0), cursor(num_labels, 0);
  auto below = [&](std::size_t l) {
    return static_cast<double>(counts[l]) < cfg.threshold * static_cast<double>(order.size());
  };
  // Ascending-frequency sweeps, repeated until no label below the threshold
  // can take another copy.
  for (bool grew = true; grew;) {
    grew = false;
    for (auto l : by_freq) {
      const auto& src = sources[l];
      std::size_t stalled = 0;
      while (below(l) && stalled < src.size()) {
        const std::size_t i = src[cursor[l]];
        cursor[l] = (cursor[l] + 1) % src.size();
        if (copies[i] >= cfg.max_duplication) {
          ++stalled;
          continue;
        }
        stalled = 0;
        grew = true;
        ++copies[i];
        order.push_back(i);
        for (std::size_t k = 0; k < num_labels; ++k) counts[k] += data[i].labels[k];
      }
    }
  }
  return order;
}

std::vector<Sample> selective_oversample(const std::vector<Sample>& data, const ResampleConfig& cfg) {
  std::vector<Sample> out;
  for (auto i : oversample_indices(data, cfg)) out.push_back(data[i]);
  return out;
}

std::vector<std::vector<std::size_t>> make_folds(const std::vector<Sample>& data, std::size_t k, bool by_subject,
                                                 std::uint64_t seed) {
  if (k < 2) throw ConfigError("make_folds: k must be >= 2");
  Rng rng(derive_seed(seed, "folds"));
  std::vector<std::vector<std::size_t>> folds(k);
  if (by_subject) {
    std::set<std::size_t> unique;
    for (const auto& s : data) unique.insert(s.subject);
    if (unique.size() < k) {
      throw DataError("make_folds: " + std::to_string(unique.size()) + " subjects for " + std::to_string(k) +
                      " folds");
    }
    std::vector<std::size_t> subjects(unique.begin(), unique.end());
    rng.shuffle(subjects);
    std::map<std::size_t, std::size_t> fold_of;
    for (std::size_t i = 0; i < subjects.size(); ++i) fold_of[subjects[i]] = i % k;
    for (std::size_t i = 0; i < data.size(); ++i) folds[fold_of[data[i].subject]].push_back(i);
  } else {
    if (data.size() < k) throw DataError("make_folds: fewer samples than folds");
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i) folds[i % k].push_back(idx[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
  }
  return folds;
}

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw DataError("decode_image: truncated header");
  return bytes.substr(start, pos - start);
}

std::size_t header_number(const std::string& bytes, std::size_t& pos, const char* what) {
  const std::string tok = header_token(bytes, pos);
  if (tok.empty() || tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw DataError(std::string("decode_image: bad ") + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0)); }

}  // namespace

Image decode_image(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = header_token(bytes, pos);
  std::size_t channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw DataError("decode_image: unsupported magic '" + magic.substr(0, 8) + "'");
  }
  const std::size_t width = header_number(bytes, pos, "width");
  const std::size_t height = header_number(bytes, pos, "height");
  const std::size_t maxval = header_number(bytes, pos, "maxval");
  if (width == 0 || height == 0) throw DataError("decode_image: zero image dimension");
  if (maxval != 255) throw DataError("decode_image: maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw DataError("decode_image: truncated header");
  }
  ++pos;
  const std::size_t count = width * height * channels;
  if (bytes.size() - pos < count) {
    throw DataError("decode_image: payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                    std::to_string(count));
  }
  Image img = Image::filled(height, width, channels, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  }
  return img;
}

std::string encode_image(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DataError("encode_image: 1 or 3 channels required");
  std::string out = (image.channels == 3 ? "P6\n" : "P5\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

std::string encode_heatmap(std::span<const double> map, std::size_t height, std::size_t width) {
  if (map.size() != height * width) throw DimensionError("encode_heatmap: map size does not match H x W");
  Image img = Image::filled(height, width, 1, 0.0);
  if (!map.empty()) {
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      for (std::size_t i = 0; i < map.size(); ++i) img.pixels[i] = (map[i] - *lo) / range;
    }
  }
  return encode_image(img);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& data, Task task) {
  std::string manifest = std::string(kManifestHeader) + "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.ppm", i);
    write_file(dir / name, encode_image(data[i].image));
    std::string labels;
    if (task == Task::kMultiLabel) {
      for (auto v : data[i].labels) labels.push_back(v ? '1' : '0');
    } else {
      labels = std::to_string(data[i].class_id);
    }
    manifest += std::string(name) + "\t" + std::to_string(data[i].subject) + "\t" + labels + "\n";
  }
  write_file(dir / kManifestName, manifest);
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir, Task task) {
  std::istringstream in(read_file(dir / kManifestName));
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw DataError("read_dataset: missing manifest header in " + (dir / kManifestName).string());
  }
  std::vector<Sample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string path, subject, labels;
    if (!std::getline(row, path, '\t') || !std::getline(row, subject, '\t') || !std::getline(row, labels)) {
      throw DataError("read_dataset: malformed manifest line " + std::to_string(lineno));
    }
    Sample s;
    s.image = decode_image(read_file(dir / path));
    try {
      s.subject = std::stoul(subject);
      if (task == Task::kMultiLabel) {
        for (char c : labels) {
          if (c != '0' && c != '1') throw DataError("bad label character");
          s.labels.push_back(c == '1' ? 1 : 0);
        }
      } else {
        s.class_id = std::stoul(labels);
      }
    } catch (const std::exception&) {
      throw DataError("read_dataset: malformed manifest line " + std::to_string(lineno));
    }
    out.push_back(std::move(s));
  }
  return out;
}

Tensor batch_images(const std::vector<Sample>& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("batch_images: empty batch");
  const Image& first = data[indices[0]].image;
  const std::size_t h = first.height, w = first.width;
  std::vector<double> v(indices.size() * 3 * h * w);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Image& img = data[indices[b]].image;
    if (img.height != h || img.width != w || img.channels != 3) {
      throw DimensionError("batch_images: images must share one H x W x 3 shape");
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double* dst = v.data() + (b * 3 + c) * h * w;
      for (std::size_t p = 0; p < h * w; ++p) dst[p] = img.pixels[p * 3 + c];
    }
  }
  return Tensor::from({indices.size(), 3, h, w}, std::move(v));
}

Targets batch_targets(const std::vector<Sample>& data, std::span<const std::size_t> indices, Task task) {
  Targets t;
  if (task == Task::kMultiLabel) {
    const std::size_t l = data[indices[0]].labels.size();
    std::vector<double> v;
    v.reserve(indices.size() * l);
    for (auto i : indices) {
      if (data[i].labels.size() != l) throw DimensionError("batch_targets: inconsistent label lengths");
      for (auto y : data[i].labels) v.push_back(y);
    }
    t.labels = Tensor::from({indices.size(), l}, std::move(v));
  } else {
    for (auto i : indices) t.classes.push_back(data[i].class_id);
  }
  return t;
}

}  // namespace sma
