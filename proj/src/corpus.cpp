#include "prefmap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace prefmap::corpus {

using nlohmann::json;

namespace {
constexpr std::array<const char*, kLandUseCount> kLandUseNames{"green", "built_low", "built_high", "water", "road"};
}  // namespace

const char* landuse_name(LandUse u) { return kLandUseNames[static_cast<int>(u)]; }

LandUseMix parse_mix(const std::string& text) {
  LandUseMix mix{};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ValidationError("landuse mix entry without ':' : " + item);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    const auto name = trim(item.substr(0, colon));
    const auto it = std::find(kLandUseNames.begin(), kLandUseNames.end(), name);
    if (it == kLandUseNames.end()) throw ValidationError("unknown land use class: " + name);
    try {
      mix[static_cast<std::size_t>(it - kLandUseNames.begin())] = std::stod(trim(item.substr(colon + 1)));
    } catch (const std::logic_error&) {
      throw ValidationError("bad weight for land use class " + name);
    }
  }
  return mix;
}

std::string format_mix(const LandUseMix& mix) {
  std::string out;
  for (int i = 0; i < kLandUseCount; ++i) {
    if (mix[i] == 0.0) continue;
    if (!out.empty()) out += ",";
    std::ostringstream v;
    v << mix[i];
    out += std::string(kLandUseNames[i]) + ":" + v.str();
  }
  return out;
}

void CitySpec::validate() const {
  if (city_id.empty() || city_id.find('/') != std::string::npos)
    throw ValidationError("city id must be non-empty and contain no '/': '" + city_id + "'");
  double sum = 0.0;
  for (double w : landuse_mix) {
    if (!(w >= 0.0)) throw ValidationError("land use weights must be non-negative (" + city_id + ")");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("land use weights must sum to 1 (" + city_id + ")");
  if (std::abs(center.lat_deg()) >= geo::kMaxCityLatitude)
    throw ValidationError("city center latitude beyond +/-85 degrees: " + city_id);
  geo::grid_side(extent_m, cell_m);
}

void PlaceManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records)
    if (!seen.insert(r.cell.geokey).second) throw ValidationError("duplicate geokey in manifest: " + r.cell.geokey);
}

const PlaceRecord* PlaceManifest::find(const std::string& geokey) const {
  for (const auto& r : records)
    if (r.cell.geokey == geokey) return &r;
  return nullptr;
}

const char* kind_name(ImageKind k) { return k == ImageKind::kSatellite ? "sat" : "sv"; }

std::string image_rel_path(ImageKind kind, const std::string& geokey) {
  return std::string("images/") + kind_name(kind) + "/" + geokey + ".png";
}

std::size_t sv_count(std::size_t cells, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("street-level fraction must be in [0, 1]");
  // Guard against 0.64 * 400 = 256.00000000000003 rounding up.
  const double exact = fraction * static_cast<double>(cells);
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) < 1e-9) return static_cast<std::size_t>(rounded);
  return static_cast<std::size_t>(std::ceil(exact));
}

std::vector<PlaceRecord> plan_city(const CitySpec& spec, std::uint64_t seed, const CorpusOptions& opts) {
  spec.validate();
  auto cells = geo::partition_city(spec.city_id, spec.center, spec.extent_m, spec.cell_m);
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> key(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) key[i] = derive_seed(seed ^ 0x5f5eULL, cells[i].geokey);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return key[a] < key[b] || (key[a] == key[b] && a < b); });
  std::vector<bool> has_sv(cells.size(), false);
  const auto n_sv = sv_count(cells.size(), opts.sv_fraction);
  for (std::size_t i = 0; i < n_sv; ++i) has_sv[order[i]] = true;

  std::vector<PlaceRecord> out;
  out.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    PlaceRecord rec{cells[i], image_rel_path(ImageKind::kSatellite, cells[i].geokey), std::nullopt, std::nullopt};
    if (has_sv[i]) rec.sv_path = image_rel_path(ImageKind::kStreetView, cells[i].geokey);
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

// Lattice value noise: hashed lattice values in [0,1), bilinear interpolation.
double lattice_value(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  std::uint64_t h = seed;
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = x - fx, ty = y - fy;
  const double v00 = lattice_value(seed, ix, iy), v10 = lattice_value(seed, ix + 1, iy);
  const double v01 = lattice_value(seed, ix, iy + 1), v11 = lattice_value(seed, ix + 1, iy + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

// 4 octaves, persistence 0.5, normalized to [0,1).
double fractal_noise(std::uint64_t seed, double x, double y, double wavelength) {
  double sum = 0.0, amp = 1.0, norm = 0.0, freq = 1.0 / wavelength;
  for (int o = 0; o < 4; ++o) {
    sum += amp * value_noise(derive_seed(seed, static_cast<std::uint64_t>(o)), x * freq, y * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

constexpr std::array<double, kLandUseCount> kWavelengthM{900.0, 700.0, 600.0, 1200.0, 260.0};
constexpr double kContrast = 9.0;
constexpr int kLatentStep = 4;  // class scores are evaluated every 4 px and interpolated

// Land-use class scores at world position (meters from the city's NW corner).
std::array<double, kLandUseCount> class_scores(const CitySpec& spec, std::uint64_t field_seed, double x, double y) {
  std::array<double, kLandUseCount> s{};
  for (int k = 0; k < kLandUseCount; ++k) {
    const double w = spec.landuse_mix[k];
    if (w <= 0.0) {
      s[k] = -1.0;
      continue;
    }
    const double n = fractal_noise(derive_seed(field_seed, static_cast<std::uint64_t>(k)), x, y, kWavelengthM[k]);
    s[k] = w * std::exp(kContrast * (n - 0.5));
  }
  return s;
}

int argmax(const std::array<double, kLandUseCount>& s) {
  int best = 0;
  for (int k = 1; k < kLandUseCount; ++k)
    if (s[k] > s[best]) best = k;
  return best;
}

// Per-pixel land-use classes for a square patch of side `meters` starting at (x0, y0).
std::vector<std::uint8_t> classify_patch(const CitySpec& spec, std::uint64_t field_seed, double x0, double y0,
                                         double meters, int px) {
  const int coarse = px / kLatentStep + 2;
  const double step_m = meters * kLatentStep / px;
  std::vector<std::array<double, kLandUseCount>> grid(static_cast<std::size_t>(coarse) * coarse);
  for (int j = 0; j < coarse; ++j)
    for (int i = 0; i < coarse; ++i)
      grid[static_cast<std::size_t>(j) * coarse + i] = class_scores(spec, field_seed, x0 + i * step_m, y0 + j * step_m);

  std::vector<std::uint8_t> cls(static_cast<std::size_t>(px) * px);
  for (int py = 0; py < px; ++py) {
    const double gy = (py + 0.5) / kLatentStep;
    const int j = std::min(static_cast<int>(gy), coarse - 2);
    const double ty = gy - j;
    for (int qx = 0; qx < px; ++qx) {
      const double gx = (qx + 0.5) / kLatentStep;
      const int i = std::min(static_cast<int>(gx), coarse - 2);
      const double tx = gx - i;
      std::array<double, kLandUseCount> s{};
      const auto& a = grid[static_cast<std::size_t>(j) * coarse + i];
      const auto& b = grid[static_cast<std::size_t>(j) * coarse + i + 1];
      const auto& c = grid[static_cast<std::size_t>(j + 1) * coarse + i];
      const auto& d = grid[static_cast<std::size_t>(j + 1) * coarse + i + 1];
      for (int k = 0; k < kLandUseCount; ++k)
        s[k] = (a[k] * (1 - tx) + b[k] * tx) * (1 - ty) + (c[k] * (1 - tx) + d[k] * tx) * ty;
      cls[static_cast<std::size_t>(py) * px + qx] = static_cast<std::uint8_t>(argmax(s));
    }
  }
  return cls;
}

struct Shade {
  double r, g, b;
};

constexpr std::array<Shade, kLandUseCount> kSatPalette{{
    {56, 128, 48},    // green
    {196, 170, 140},  // built_low
    {128, 124, 132},  // built_high
    {36, 84, 150},    // water
    {92, 92, 96},     // road
}};

constexpr std::array<Shade, kLandUseCount> kGroundPalette{{
    {72, 142, 60}, {150, 145, 138}, {140, 138, 142}, {40, 92, 160}, {80, 80, 84},
}};

constexpr std::array<Shade, kLandUseCount> kFacadePalette{{
    {46, 108, 44}, {206, 176, 142}, {108, 110, 126}, {0, 0, 0}, {0, 0, 0},
}};

// Fraction of the horizon height occupied by the object standing on each class.
constexpr std::array<double, kLandUseCount> kObjectHeight{0.40, 0.50, 0.92, 0.0, 0.0};

Rgb shade(const Shade& s, double factor) {
  auto ch = [&](double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * factor), 0L, 255L)); };
  return {ch(s.r), ch(s.g), ch(s.b)};
}

}  // namespace

SynthPlace render_place(const CitySpec& spec, const geo::PlaceCell& cell, bool with_sv, std::uint64_t seed,
                        const CorpusOptions& opts) {
  const int px = opts.image_px;
  if (px < 8) throw ValidationError("image size must be at least 8 px");
  const std::uint64_t field_seed = derive_seed(spec.texture_seed ^ seed, spec.city_id);
  const std::uint64_t cell_seed = derive_seed(seed, cell.geokey);
  const double x0 = cell.col * cell.cell_m;
  const double y0 = cell.row * cell.cell_m;

  const auto cls = classify_patch(spec, field_seed, x0, y0, cell.cell_m, px);

  SynthPlace out;
  std::array<std::size_t, kLandUseCount> counts{};
  for (auto c : cls) ++counts[c];
  const double total = static_cast<double>(cls.size());
  out.truth.green_fraction = counts[0] / total;
  out.truth.built_fraction = (counts[1] + counts[2]) / total;
  out.truth.water_fraction = counts[3] / total;

  // Top-down view: palette + fine texture anchored to world coordinates.
  out.sat = Image(px, px);
  const double m_per_px = cell.cell_m / px;
  const std::uint64_t detail_seed = derive_seed(field_seed, "detail");
  for (int y = 0; y < px; ++y) {
    for (int x = 0; x < px; ++x) {
      const int k = cls[static_cast<std::size_t>(y) * px + x];
      const double wx = x0 + (x + 0.5) * m_per_px, wy = y0 + (y + 0.5) * m_per_px;
      double f = 0.82 + 0.36 * value_noise(detail_seed + k, wx / 6.0, wy / 6.0);
      if (k == static_cast<int>(LandUse::kBuiltHigh) || k == static_cast<int>(LandUse::kBuiltLow)) {
        // Roof blocks with dark seams.
        const double bx = std::fmod(wx, 24.0), by = std::fmod(wy, 24.0);
        if (bx < 2.5 || by < 2.5) f *= 0.7;
      }
      out.sat.set(x, y, shade(kSatPalette[k], f));
    }
  }

  if (with_sv) {
    // Eye-level view looking north across the cell: sky, objects standing on
    // the far half of the cell, ground plane in perspective below the horizon.
    Image sv(px, px);
    const int horizon = static_cast<int>(0.45 * px);
    Rng rng(cell_seed);
    const double sky_shift = rng.uniform(-12.0, 12.0);
    for (int y = 0; y < horizon; ++y) {
      const double t = static_cast<double>(y) / horizon;
      const Shade sky{150 + 50 * t + sky_shift, 190 + 30 * t + sky_shift, 235 + 5 * t};
      for (int x = 0; x < px; ++x) sv.set(x, y, shade(sky, 1.0));
    }
    for (int y = horizon; y < px; ++y) {
      const double t = static_cast<double>(y - horizon + 1) / (px - horizon);  // 0 far .. 1 near
      const int row = std::clamp(static_cast<int>((1.0 - t) * (px - 1)), 0, px - 1);
      for (int x = 0; x < px; ++x) {
        const int k = cls[static_cast<std::size_t>(row) * px + x];
        const double f = (0.75 + 0.25 * t) * (0.9 + 0.2 * value_noise(detail_seed + 17 + k, x / 5.0, y / 3.0));
        sv.set(x, y, shade(kGroundPalette[k], f));
      }
    }
    // Objects: each column is dominated by the class found in the far half.
    for (int x = 0; x < px; ++x) {
      std::array<int, kLandUseCount> hist{};
      for (int row = 0; row < px / 2; row += 4) ++hist[cls[static_cast<std::size_t>(row) * px + x]];
      const int k = static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());
      const double h = kObjectHeight[k];
      if (h <= 0.0) continue;
      const double jitter = 0.85 + 0.3 * value_noise(detail_seed + 31 + k, x / 12.0, 0.5);
      const int top = std::max(0, horizon - static_cast<int>(h * jitter * horizon));
      for (int y = top; y < horizon; ++y) {
        double f = 0.85 + 0.3 * value_noise(detail_seed + 41 + k, x / 4.0, y / 4.0);
        if (k == static_cast<int>(LandUse::kBuiltHigh) && (y % 10 < 4) && (x % 8 < 4)) f *= 0.6;  // windows
        sv.set(x, y, shade(kFacadePalette[k], f));
      }
    }
    out.sv = std::move(sv);
  }
  return out;
}

std::vector<PlaceRecord> synth_city(const CitySpec& spec, std::uint64_t seed, const CorpusOptions& opts,
                                    const ImageSink& sink) {
  auto records = plan_city(spec, seed, opts);
  for (auto& rec : records) {
    auto place = render_place(spec, rec.cell, rec.sv_path.has_value(), seed, opts);
    rec.truth = place.truth;
    if (sink) {
      sink(rec.sat_path, place.sat);
      if (rec.sv_path) sink(*rec.sv_path, *place.sv);
    }
  }
  return records;
}

int expected_tile_px(const geo::PlaceCell& cell, const CorpusOptions& opts) {
  return static_cast<int>(std::lround(geo::cell_pixel_extent(cell.center, opts.tile, cell.cell_m)));
}

namespace {

Image normalize_tile(const Image& tile, int expected, int out_px, const std::string& geokey,
                     std::vector<std::string>& warnings) {
  Image work = tile;
  if (work.width != work.height) {
    const int side = std::min(work.width, work.height);
    work = center_crop(work, side, side);
    warnings.push_back(geokey + ": non-square tile cropped to " + std::to_string(side) + " px");
  }
  if (work.width < expected) {
    warnings.push_back(geokey + ": tile " + std::to_string(work.width) + " px resampled to " +
                       std::to_string(expected) + " px (bilinear)");
    work = resize_bilinear(work, expected, expected);
  } else if (work.width > expected) {
    work = center_crop(work, expected, expected);
  }
  return resize_bilinear(work, out_px, out_px);
}

}  // namespace

ImportReport import_tiles(const std::filesystem::path& dir, const std::vector<geo::PlaceCell>& cells,
                          const CorpusOptions& opts, const ImageSink& sink) {
  ImportReport report;
  std::vector<std::string> missing;
  for (const auto& cell : cells) {
    const auto sat_file = dir / "sat" / (cell.geokey + ".png");
    if (!std::filesystem::exists(sat_file)) missing.push_back(cell.geokey);
  }
  if (!missing.empty()) {
    std::string msg = "missing satellite tiles (" + std::to_string(missing.size()) + "):";
    for (const auto& k : missing) msg += " " + k;
    throw ValidationError(msg);
  }
  for (const auto& cell : cells) {
    const int expected = expected_tile_px(cell, opts);
    PlaceRecord rec{cell, image_rel_path(ImageKind::kSatellite, cell.geokey), std::nullopt, std::nullopt};
    auto sat = normalize_tile(read_png(dir / "sat" / (cell.geokey + ".png")), expected, opts.image_px, cell.geokey,
                              report.warnings);
    if (sink) sink(rec.sat_path, sat);
    const auto sv_file = dir / "sv" / (cell.geokey + ".png");
    if (std::filesystem::exists(sv_file)) {
      auto sv = read_png(sv_file);
      if (sv.width != opts.image_px || sv.height != opts.image_px) {
        report.warnings.push_back(cell.geokey + ": street-level image resampled to " + std::to_string(opts.image_px) +
                                  " px (bilinear)");
        sv = resize_bilinear(sv, opts.image_px, opts.image_px);
      }
      rec.sv_path = image_rel_path(ImageKind::kStreetView, cell.geokey);
      if (sink) sink(*rec.sv_path, sv);
    }
    report.manifest.records.push_back(std::move(rec));
  }
  report.manifest.validate();
  return report;
}

DatasetCounts build_dataset_counts(const PlaceManifest& manifest) {
  DatasetCounts out;
  for (const auto& r : manifest.records) {
    auto& c = out.per_city[r.cell.city_id];
    ++c.sat;
    ++out.total.sat;
    if (r.sv_path) {
      ++c.sv;
      ++out.total.sv;
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const PlaceManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : manifest.records) {
    json j = {{"city", r.cell.city_id},
              {"row", r.cell.row},
              {"col", r.cell.col},
              {"lat", r.cell.center.lat_deg()},
              {"lon", r.cell.center.lon_deg()},
              {"geokey", r.cell.geokey},
              {"cell_m", r.cell.cell_m},
              {"sat_path", r.sat_path},
              {"seed", manifest.seed},
              {"fingerprint", manifest.fingerprint}};
    if (r.sv_path) j["sv_path"] = *r.sv_path;
    if (r.truth)
      j["truth"] = {{"green", r.truth->green_fraction},
                    {"built", r.truth->built_fraction},
                    {"water", r.truth->water_fraction}};
    out << j.dump() << '\n';
  }
}

PlaceManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing place manifest " + path.string() + " (produced by stage 'synth')");
  PlaceManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      PlaceRecord r{geo::PlaceCell{j.at("city").get<std::string>(), j.at("row").get<int>(), j.at("col").get<int>(),
                                   geo::GeoPoint(j.at("lat").get<double>(), j.at("lon").get<double>()),
                                   j.value("cell_m", 200.0), j.at("geokey").get<std::string>()},
                    j.at("sat_path").get<std::string>(), std::nullopt, std::nullopt};
      if (j.contains("sv_path")) r.sv_path = j["sv_path"].get<std::string>();
      if (j.contains("truth")) {
        const auto& t = j["truth"];
        r.truth = GroundTruth{t.at("green").get<double>(), t.at("built").get<double>(), t.at("water").get<double>()};
      }
      m.seed = j.value("seed", std::uint64_t{0});
      m.fingerprint = j.value("fingerprint", std::string{});
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

}  // namespace prefmap::corpus
