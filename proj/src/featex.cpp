#include "prefmap/featex.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

namespace prefmap::featex {

static_assert(std::endian::native == std::endian::little, "FVEC/SOM/MLP writers assume a little-endian host");

void FeatureMatrix::append(std::string id, std::span<const float> v) {
  if (ids.empty() && dim == 0) dim = v.size();
  if (v.size() != dim) throw ValidationError("feature row has dimension " + std::to_string(v.size()) + ", expected " +
                                             std::to_string(dim));
  values.insert(values.end(), v.begin(), v.end());
  ids.push_back(std::move(id));
}

std::vector<float> GridHistogramExtractor::extract(const Image& input) const {
  if (input.width <= 0 || input.height <= 0) throw ValidationError("cannot extract features from an empty image");
  const Image img = (input.width == kInputPx && input.height == kInputPx)
                        ? input
                        : resize_bilinear(input, kInputPx, kInputPx);
  const int n = kInputPx;
  const int block = n / kGrid;

  std::vector<double> lum(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto p = img.at(x, y);
      lum[static_cast<std::size_t>(y) * n + x] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  auto L = [&](int x, int y) {
    x = std::clamp(x, 0, n - 1);
    y = std::clamp(y, 0, n - 1);
    return lum[static_cast<std::size_t>(y) * n + x];
  };

  std::vector<float> out(kDim, 0.0f);
  for (int by = 0; by < kGrid; ++by) {
    for (int bx = 0; bx < kGrid; ++bx) {
      std::array<double, 4 * kBins> h{};
      for (int y = by * block; y < (by + 1) * block; ++y) {
        for (int x = bx * block; x < (bx + 1) * block; ++x) {
          const auto p = img.at(x, y);
          for (int ch = 0; ch < 3; ++ch) h[ch * kBins + (p[ch] >> 5)] += 1.0;
          const double gx = L(x + 1, y) - L(x - 1, y);
          const double gy = L(x, y + 1) - L(x, y - 1);
          const double mag = std::hypot(gx, gy);
          if (mag > 0.0) {
            double angle = std::atan2(gy, gx);
            if (angle < 0) angle += std::numbers::pi;
            int bin = static_cast<int>(angle / std::numbers::pi * kBins);
            if (bin >= kBins) bin = kBins - 1;
            h[3 * kBins + bin] += mag;
          }
        }
      }
      float* dst = out.data() + static_cast<std::size_t>(by * kGrid + bx) * 4 * kBins;
      for (int part = 0; part < 4; ++part) {
        double sum = 0.0;
        for (int b = 0; b < kBins; ++b) sum += h[part * kBins + b];
        if (sum <= 0.0) continue;
        for (int b = 0; b < kBins; ++b) dst[part * kBins + b] = static_cast<float>(h[part * kBins + b] / sum);
      }
    }
  }
  return out;
}

const Extractor& default_extractor() {
  static const GridHistogramExtractor instance;
  return instance;
}

FeatureMatrix extract_corpus(const corpus::PlaceManifest& manifest, const std::filesystem::path& root,
                             corpus::ImageKind kind, std::optional<double> subsample, std::uint64_t seed,
                             const Extractor& extractor) {
  std::vector<std::pair<std::string, std::string>> items;  // geokey, path
  for (const auto& r : manifest.records) {
    if (kind == corpus::ImageKind::kSatellite) items.emplace_back(r.cell.geokey, r.sat_path);
    else if (r.sv_path) items.emplace_back(r.cell.geokey, *r.sv_path);
  }
  if (subsample) {
    if (!(*subsample > 0.0 && *subsample <= 1.0))
      throw ValidationError("subsample fraction must be in (0, 1]; an empty feature matrix is not allowed");
    const auto keep = static_cast<std::size_t>(std::lround(*subsample * static_cast<double>(items.size())));
    if (keep == 0) throw ValidationError("subsample selects no images");
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "subsample"));
    rng.shuffle(idx);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    std::vector<std::pair<std::string, std::string>> picked;
    for (auto i : idx) picked.push_back(items[i]);
    items = std::move(picked);
  }
  if (items.empty()) throw ValidationError(std::string("no ") + corpus::kind_name(kind) + " images in manifest");

  FeatureMatrix m;
  m.dim = extractor.dim();
  m.values.reserve(items.size() * m.dim);
  std::vector<std::string> failures;
  for (const auto& [id, rel] : items) {
    try {
      const auto v = extractor.extract(read_png(root / rel));
      m.append(id, v);
    } catch (const Error& e) {
      failures.push_back(id + " (" + e.what() + ")");
    }
  }
  if (!failures.empty()) {
    std::string msg = "feature extraction failed for " + std::to_string(failures.size()) + " image(s):";
    for (const auto& f : failures) msg += "\n  " + f;
    throw Error(msg);
  }
  return m;
}

FeatureMatrix normalize(FeatureMatrix m, NormalizeMode mode) {
  if (m.rows() == 0) throw ValidationError("normalize: empty matrix");
  if (mode == NormalizeMode::kL2Rows) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      auto r = m.row(i);
      double ss = 0.0;
      for (float v : r) ss += static_cast<double>(v) * v;
      if (ss <= 0.0) continue;
      const double inv = 1.0 / std::sqrt(ss);
      for (float& v : r) v = static_cast<float>(v * inv);
    }
    return m;
  }
  const auto n = static_cast<double>(m.rows());
  for (std::size_t d = 0; d < m.dim; ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) mean += m.row(i)[d];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) var += (m.row(i)[d] - mean) * (m.row(i)[d] - mean);
    const double sd = std::sqrt(var / n);
    for (std::size_t i = 0; i < m.rows(); ++i)
      m.row(i)[d] = sd > 0.0 ? static_cast<float>((m.row(i)[d] - mean) / sd) : 0.0f;
  }
  return m;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_similarity: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t& pos) {
  if (pos + 4 > b.size()) throw Error("FVEC: truncated stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_fvec(const FeatureMatrix& m) {
  std::vector<std::uint8_t> out{'F', 'V', 'E', 'C'};
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.dim));
  const auto* raw = reinterpret_cast<const std::uint8_t*>(m.values.data());
  out.insert(out.end(), raw, raw + m.values.size() * sizeof(float));
  for (const auto& id : m.ids) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
  }
  return out;
}

FeatureMatrix decode_fvec(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || std::memcmp(b.data(), "FVEC", 4) != 0) throw Error("FVEC: bad magic");
  std::size_t pos = 4;
  const auto n = get_u32(b, pos);
  const auto d = get_u32(b, pos);
  FeatureMatrix m;
  m.dim = d;
  const std::size_t bytes = static_cast<std::size_t>(n) * d * sizeof(float);
  if (pos + bytes > b.size()) throw Error("FVEC: truncated value block");
  m.values.resize(static_cast<std::size_t>(n) * d);
  std::memcpy(m.values.data(), b.data() + pos, bytes);
  pos += bytes;
  m.ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = get_u32(b, pos);
    if (pos + len > b.size()) throw Error("FVEC: truncated id block");
    m.ids.emplace_back(reinterpret_cast<const char*>(b.data() + pos), len);
    pos += len;
  }
  if (pos != b.size()) throw Error("FVEC: trailing bytes");
  return m;
}

void write_fvec(const std::filesystem::path& path, const FeatureMatrix& m) { write_file_bytes(path, encode_fvec(m)); }

FeatureMatrix read_fvec(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DependencyError("missing feature file " + path.string());
  return decode_fvec(read_file_bytes(path));
}

}  // namespace prefmap::featex
