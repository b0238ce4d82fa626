#pragma once

// Feature bags, their binary file format, dataset manifests and the
// synthetic corpus generator.
//
// Bag file (little-endian):
//   "LVAD" | version u32 | T u32 | D_V u32 | D_A u32 | label u8 | has_truth u8
//   T*D_V f32 visual (row-major) | T*D_A f32 audio | [16*T u8 frame truth]

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lvad/classifier.hpp"
#include "lvad/tensor.hpp"

namespace lvad {

static_assert(std::endian::native == std::endian::little, "bag I/O assumes a little-endian host");

struct VideoFeatureBag {
  std::string id;
  Tensor visual;  // T x D_V
  Tensor audio;   // T x D_A
  int label = 0;
  std::optional<std::vector<std::uint8_t>> frame_truth;  // 16 * T entries

  std::size_t snippets() const { return visual.rows(); }

  void validate() const {
    if (!visual.defined() || !audio.defined() || visual.rank() != 2 || audio.rank() != 2) {
      throw ContractError("bag " + id + ": visual and audio must be matrices");
    }
    if (visual.rows() != audio.rows()) {
      throw ContractError("bag " + id + ": visual has " + std::to_string(visual.rows()) + " snippets, audio has " +
                          std::to_string(audio.rows()));
    }
    if (label != 0 && label != 1) throw ContractError("bag " + id + ": label must be 0 or 1");
    if (frame_truth) {
      if (frame_truth->size() != kFramesPerSnippet * snippets()) {
        throw ContractError("bag " + id + ": frame truth length must be 16 * T");
      }
      for (auto v : *frame_truth) {
        if (v > 1) throw ContractError("bag " + id + ": frame truth must be binary");
        if (v == 1 && label == 0) throw ContractError("bag " + id + ": normal bag with anomalous frames");
      }
    }
  }
};

inline constexpr char kBagMagic[4] = {'L', 'V', 'A', 'D'};
inline constexpr std::uint32_t kBagVersion = 1;

namespace detail {

template <class T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

class ByteReader {
public:
  ByteReader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class T>
  T get(const char* field) {
    if (pos_ + sizeof(T) > bytes_.size()) fail(std::string("truncated while reading ") + field);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_ + ": " + what); }

private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_bag(const VideoFeatureBag& bag) {
  bag.validate();
  std::string out(kBagMagic, 4);
  detail::put<std::uint32_t>(out, kBagVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.snippets()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.visual.cols()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.audio.cols()));
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(bag.label));
  detail::put<std::uint8_t>(out, bag.frame_truth ? 1 : 0);
  for (double v : bag.visual.data()) detail::put<float>(out, static_cast<float>(v));
  for (double v : bag.audio.data()) detail::put<float>(out, static_cast<float>(v));
  if (bag.frame_truth) out.append(bag.frame_truth->begin(), bag.frame_truth->end());
  return out;
}

/// Parses a bag; `source` names the file in error messages and the stem
/// of it becomes the bag id.
inline VideoFeatureBag decode_bag(const std::string& bytes, const std::string& source) {
  detail::ByteReader in(bytes, source);
  char magic[4];
  for (auto& c : magic) c = in.get<char>("magic");
  if (std::memcmp(magic, kBagMagic, 4) != 0) in.fail("bad magic (expected LVAD)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kBagVersion) in.fail("unsupported version " + std::to_string(version));
  const auto t = in.get<std::uint32_t>("T");
  const auto dv = in.get<std::uint32_t>("D_V");
  const auto da = in.get<std::uint32_t>("D_A");
  if (t == 0) in.fail("T must be positive");
  if (dv == 0) in.fail("D_V must be positive");
  if (da == 0) in.fail("D_A must be positive");
  const auto label = in.get<std::uint8_t>("label");
  if (label > 1) in.fail("label must be 0 or 1");
  const auto has_truth = in.get<std::uint8_t>("has_truth");
  if (has_truth > 1) in.fail("has_truth must be 0 or 1");

  const std::size_t n_visual = std::size_t{t} * dv;
  const std::size_t n_audio = std::size_t{t} * da;
  const std::size_t expected = 4 * (n_visual + n_audio) + (has_truth ? kFramesPerSnippet * t : 0);
  if (in.remaining() != expected) {
    in.fail("payload holds " + std::to_string(in.remaining()) + " bytes, header implies " + std::to_string(expected) +
            " (T mismatch or truncation)");
  }
  auto read_block = [&](std::size_t n, const char* field) {
    std::vector<double> values(n);
    for (auto& v : values) {
      v = in.get<float>(field);
      if (!std::isfinite(v)) in.fail(std::string("non-finite value in ") + field);
    }
    return values;
  };
  VideoFeatureBag bag;
  bag.id = std::filesystem::path(source).stem().string();
  bag.visual = Tensor({t, dv}, read_block(n_visual, "visual"));
  bag.audio = Tensor({t, da}, read_block(n_audio, "audio"));
  bag.label = label;
  if (has_truth) {
    std::vector<std::uint8_t> truth(kFramesPerSnippet * t);
    for (auto& v : truth) {
      v = in.get<std::uint8_t>("frame_truth");
      if (v > 1) in.fail("frame_truth must be binary");
      if (v == 1 && label == 0) in.fail("frame_truth marks anomalous frames in a normal bag");
    }
    bag.frame_truth = std::move(truth);
  }
  return bag;
}

inline void save_bag(const VideoFeatureBag& bag, const std::filesystem::path& path) {
  auto bytes = encode_bag(bag);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline VideoFeatureBag load_bag(const std::filesystem::path& path) { return decode_bag(read_file(path), path.string()); }

// ---- manifest ----------------------------------------------------------------

enum class Split { kTrain, kTest };

inline const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct ManifestEntry {
  std::filesystem::path path;
  int label = 0;
  Split split = Split::kTrain;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split split) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [&](const ManifestEntry& e) { return e.split == split; });
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (!seen.insert(e.path.lexically_normal().string()).second) {
        throw ParseError("manifest: duplicate path " + e.path.string());
      }
    }
  }
};

/// Text manifest, one `<path>\t<label>\t<split>` line per bag. Relative
/// paths are resolved against the manifest's directory.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  Manifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    auto where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3) throw ParseError(where + ": expected 3 tab-separated fields");
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    if (fields[1] == "0" || fields[1] == "1") {
      e.label = fields[1][0] - '0';
    } else {
      throw ParseError(where + ": label must be 0 or 1");
    }
    if (fields[2] == "train") {
      e.split = Split::kTrain;
    } else if (fields[2] == "test") {
      e.split = Split::kTest;
    } else {
      throw ParseError(where + ": split must be train or test");
    }
    manifest.entries.push_back(std::move(e));
  }
  manifest.validate();
  return manifest;
}

/// Writes entries with paths relative to the manifest directory when possible.
inline void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto base = path.parent_path();
  for (const auto& e : manifest.entries) {
    auto rel = e.path.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
    out << (rel.empty() ? e.path : rel).generic_string() << '\t' << e.label << '\t' << split_name(e.split) << '\n';
  }
}

/// Loads every bag of a split, checking the file label against the manifest.
inline std::vector<VideoFeatureBag> load_split(const Manifest& manifest, Split split) {
  std::vector<VideoFeatureBag> bags;
  for (const auto& e : manifest.select(split)) {
    auto bag = load_bag(e.path);
    if (bag.label != e.label) throw ParseError(e.path.string() + ": label disagrees with manifest");
    bags.push_back(std::move(bag));
  }
  return bags;
}

// ---- synthetic corpus ----------------------------------------------------------

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t n_normal = 60;
  std::size_t n_abnormal = 60;
  std::size_t t_min = 20;
  std::size_t t_max = 60;
  std::size_t d_visual = 1024;
  std::size_t d_audio = 128;
  double anomaly_rate = 0.3;
  double separation = 4.0;
  // Shape of the normal distribution.
  std::size_t mixture_components = 4;
  double component_spread = 0.5;
  double noise_std = 0.7;

  void validate() const {
    if (!(separation >= 0.0)) throw ConfigError("synthetic: separation must be >= 0");
    if (!(anomaly_rate > 0.0 && anomaly_rate <= 1.0)) throw ConfigError("synthetic: anomaly rate must lie in (0, 1]");
    if (t_min == 0 || t_min > t_max) throw ConfigError("synthetic: need 1 <= t_min <= t_max");
    if (d_visual == 0 || d_audio == 0) throw ConfigError("synthetic: widths must be positive");
    if (mixture_components == 0) throw ConfigError("synthetic: need at least one mixture component");
  }
};

/// Normal snippets come from a Gaussian mixture shared by both classes.
/// Abnormal bags add a fixed shift of norm `separation` (one direction per
/// modality) to a contiguous run of round(rate * T) snippets, at least one.
/// Values are rounded to float so that a save/load round trip is exact.
inline std::vector<VideoFeatureBag> generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian_block = [&](std::size_t rows, std::size_t cols, double sd) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = sd * normal(rng);
    return v;
  };
  auto unit_shift = [&](std::size_t dim) {
    auto v = gaussian_block(1, dim, 1.0);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x *= spec.separation / norm;
    return v;
  };
  const auto k = spec.mixture_components;
  const auto centres_v = gaussian_block(k, spec.d_visual, spec.component_spread);
  const auto centres_a = gaussian_block(k, spec.d_audio, spec.component_spread);
  const auto shift_v = unit_shift(spec.d_visual);
  const auto shift_a = unit_shift(spec.d_audio);

  std::uniform_int_distribution<std::size_t> length_dist(spec.t_min, spec.t_max);
  std::uniform_int_distribution<std::size_t> component_dist(0, k - 1);

  std::vector<VideoFeatureBag> bags;
  const auto total = spec.n_normal + spec.n_abnormal;
  for (std::size_t b = 0; b < total; ++b) {
    const bool abnormal = b >= spec.n_normal;
    const auto t = length_dist(rng);
    std::vector<double> visual(t * spec.d_visual), audio(t * spec.d_audio);
    for (std::size_t s = 0; s < t; ++s) {
      const auto c = component_dist(rng);
      for (std::size_t j = 0; j < spec.d_visual; ++j)
        visual[s * spec.d_visual + j] = centres_v[c * spec.d_visual + j] + spec.noise_std * normal(rng);
      for (std::size_t j = 0; j < spec.d_audio; ++j)
        audio[s * spec.d_audio + j] = centres_a[c * spec.d_audio + j] + spec.noise_std * normal(rng);
    }
    std::vector<std::uint8_t> truth(kFramesPerSnippet * t, 0);
    if (abnormal) {
      const auto len = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(spec.anomaly_rate * static_cast<double>(t))), 1, t);
      std::uniform_int_distribution<std::size_t> start_dist(0, t - len);
      const auto start = start_dist(rng);
      for (std::size_t s = start; s < start + len; ++s) {
        for (std::size_t j = 0; j < spec.d_visual; ++j) visual[s * spec.d_visual + j] += shift_v[j];
        for (std::size_t j = 0; j < spec.d_audio; ++j) audio[s * spec.d_audio + j] += shift_a[j];
        std::fill_n(truth.begin() + static_cast<std::ptrdiff_t>(s * kFramesPerSnippet), kFramesPerSnippet, 1);
      }
    }
    for (auto& x : visual) x = static_cast<float>(x);
    for (auto& x : audio) x = static_cast<float>(x);
    VideoFeatureBag bag;
    std::ostringstream id;
    id << (abnormal ? "abnormal_" : "normal_");
    id.width(4);
    id.fill('0');
    id << (abnormal ? b - spec.n_normal : b);
    bag.id = id.str();
    bag.visual = Tensor({t, spec.d_visual}, std::move(visual));
    bag.audio = Tensor({t, spec.d_audio}, std::move(audio));
    bag.label = abnormal ? 1 : 0;
    bag.frame_truth = std::move(truth);
    bags.push_back(std::move(bag));
  }
  return bags;
}

/// Writes bags under dir/bags/ and a manifest at dir/manifest.tsv. The last
/// round(test_fraction * n) bags of each class go to the test split.
inline Manifest write_corpus(const std::vector<VideoFeatureBag>& bags, const std::filesystem::path& dir,
                             double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("corpus: test fraction must lie in [0, 1)");
  std::filesystem::create_directories(dir / "bags");
  Manifest manifest;
  for (int label : {0, 1}) {
    std::vector<const VideoFeatureBag*> members;
    for (const auto& b : bags)
      if (b.label == label) members.push_back(&b);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto path = dir / "bags" / (members[i]->id + ".lvad");
      save_bag(*members[i], path);
      manifest.entries.push_back({path, label, i + n_test >= members.size() ? Split::kTest : Split::kTrain});
    }
  }
  save_manifest(manifest, dir / "manifest.tsv");
  return manifest;
}

}  // namespace lvad
