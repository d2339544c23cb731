#include "wavedg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "wavedg/image_io.hpp"
#include "wavedg/rng.hpp"

namespace fs = std::filesystem;

namespace wavedg {

void DomainSpec::validate() const {
  if (illumination.center_gain <= 0.0 || illumination.falloff_exp <= 0.0)
    throw std::invalid_argument("domain spec '" + name + "': illumination fields must be positive");
  if (contrast <= 0.0) throw std::invalid_argument("domain spec '" + name + "': contrast must be positive");
  if (vessels.branch_min < 1 || vessels.branch_max < vessels.branch_min)
    throw std::invalid_argument("domain spec '" + name + "': bad branch count range");
  if (vessels.width_min <= 0.0 || vessels.width_max < vessels.width_min)
    throw std::invalid_argument("domain spec '" + name + "': bad width range");
  if (vessels.tortuosity < 0.0)
    throw std::invalid_argument("domain spec '" + name + "': tortuosity must be non-negative");
  if (noise_std < 0.0)
    throw std::invalid_argument("domain spec '" + name + "': noise_std must be non-negative");
}

namespace {

struct Walker {
  double x, y, heading, width, budget;
  int depth;
};

// Max-composites an anti-aliased disc of the given radius into the canvas.
void stamp(Tensor& canvas, double cx, double cy, double radius) {
  const int s = canvas.shape[0];
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int x1 = std::min(s - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int y1 = std::min(s - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  for (int py = y0; py <= y1; ++py)
    for (int px = x0; px <= x1; ++px) {
      const double dx = px + 0.5 - cx, dy = py + 0.5 - cy;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double cov = std::min(1.0, std::max(0.0, radius - dist + 0.5));
      double& cell = canvas.values[static_cast<std::size_t>(py) * s + px];
      cell = std::max(cell, cov);
    }
}

// Renders one vessel tree set; returns per-pixel coverage in [0,1].
Tensor render_vessels(const VesselStyle& style, int size, Rng& rng) {
  Tensor coverage({size, size});
  const int trunks = rng.uniform_int(style.branch_min, style.branch_max);
  std::vector<Walker> stack;
  for (int t = 0; t < trunks; ++t) {
    // Start on a random border, heading inward.
    const int edge = rng.uniform_int(0, 3);
    double x = 0, y = 0, heading = 0;
    const double u = rng.uniform(0.1, 0.9) * size;
    switch (edge) {
      case 0: x = u; y = 0; heading = 1.5707963267948966; break;   // top, heading down
      case 1: x = u; y = size - 1; heading = -1.5707963267948966; break;
      case 2: x = 0; y = u; heading = 0.0; break;
      case 3: x = size - 1; y = u; heading = 3.141592653589793; break;
    }
    heading += rng.uniform(-0.5, 0.5);
    const double w_lo = std::max(style.width_min, 0.7 * style.width_max);
    stack.push_back({x, y, heading, rng.uniform(w_lo, style.width_max),
                     rng.uniform(0.7, 1.2) * size, 0});
  }
  int segments = static_cast<int>(stack.size());
  const double step = 0.5;
  while (!stack.empty()) {
    Walker w = stack.back();
    stack.pop_back();
    while (w.budget > 0.0 && w.width >= 0.45 && w.x > -2 && w.x < coverage.shape[0] + 2 &&
           w.y > -2 && w.y < coverage.shape[0] + 2) {
      stamp(coverage, w.x, w.y, 0.5 * w.width);
      w.x += step * std::cos(w.heading);
      w.y += step * std::sin(w.heading);
      w.heading += rng.normal(0.0, style.tortuosity * 0.35);
      w.width = std::max(0.4, w.width * 0.9985);
      w.budget -= step;
      if (w.depth < 3 && segments < 48 && rng.uniform() < 0.015) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        stack.push_back({w.x, w.y, w.heading + sign * rng.uniform(0.35, 0.95),
                         std::max(0.45, 0.72 * w.width), 0.6 * w.budget, w.depth + 1});
        ++segments;
      }
    }
  }
  return coverage;
}

struct Palette {
  double base;
  std::array<double, 3> delta;  // per-channel vessel offset against the base
  std::array<double, 3> channel_scale;
};

Palette palette_for(Modality m) {
  // Angiography analog: inverted vessel polarity in the dye-dominated
  // channels (bright on dark) while the blue channel keeps faint dark
  // vessels, mirroring the spectral selectivity of fluorescein imaging.
  if (m == Modality::angiography)
    return {0.28, {0.30, 0.30, -0.14}, {0.95, 0.90, 0.85}};
  return {0.58, {-0.30, -0.30, -0.30}, {1.00, 0.62, 0.40}};
}

}  // namespace

DomainDataset generate_domain(const DomainSpec& spec, int n, std::uint64_t seed, int image_size) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("generate_domain: n must be at least 1");
  if (image_size < 16) throw std::invalid_argument("generate_domain: image_size too small");

  DomainDataset ds;
  ds.domain_id = spec.domain_id;
  ds.samples.reserve(n);
  const Palette pal = palette_for(spec.modality);
  const double cx = image_size / 2.0, cy = image_size / 2.0;
  const double r_max = std::sqrt(cx * cx + cy * cy);

  for (int i = 0; i < n; ++i) {
    Rng rng(seed_split(seed, "sample", static_cast<std::uint64_t>(i)));
    Tensor coverage = render_vessels(spec.vessels, image_size, rng);

    Sample s;
    s.mask = Tensor({image_size, image_size});
    for (std::size_t p = 0; p < coverage.values.size(); ++p)
      s.mask.values[p] = coverage.values[p] > 0.5 ? 1.0 : 0.0;

    // Per-sample appearance jitter scales with noise_std (so noiseless specs
    // stay exactly on the documented composite): real acquisitions vary in
    // gain and contrast from shot to shot, and the jitter keeps each domain
    // a smooth appearance manifold rather than a single point.
    const double jitter = 4.0 * spec.noise_std;
    const double gain_i =
        spec.illumination.center_gain * (1.0 + rng.uniform(-jitter, jitter));
    const double contrast_i = spec.contrast * (1.0 + rng.uniform(-jitter, jitter));

    s.image.domain_id = spec.domain_id;
    s.image.pixels = Tensor({3, image_size, image_size});
    const std::size_t hw = static_cast<std::size_t>(image_size) * image_size;
    for (int py = 0; py < image_size; ++py)
      for (int px = 0; px < image_size; ++px) {
        const std::size_t p = static_cast<std::size_t>(py) * image_size + px;
        const double dx = px + 0.5 - cx, dy = py + 0.5 - cy;
        const double r = std::sqrt(dx * dx + dy * dy) / r_max;
        const double illum =
            std::pow(gain_i, 1.0 - std::pow(r, spec.illumination.falloff_exp));
        for (int c = 0; c < 3; ++c) {
          const double intensity = pal.base + pal.delta[c] * coverage.values[p];
          double v = pal.channel_scale[c] * intensity * illum;
          v = 0.5 + contrast_i * (v - 0.5);
          if (spec.noise_std > 0.0) v += rng.normal(0.0, spec.noise_std);
          s.image.pixels.values[c * hw + p] = std::min(1.0, std::max(0.0, v));
        }
      }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<DomainSpec> default_benchmark_specs() {
  // Widths sit above the half-resolution representability cliff of the
  // decoder ladder while keeping the foreground sparse.
  // Domains share vessel geometry (domain C slightly thinner) and differ
  // along the appearance axes the method targets: illumination field,
  // global contrast, noise, and vessel polarity.
  std::vector<DomainSpec> specs(4);
  specs[0] = {0, "bright_center", {1.45, 2.0}, 1.00, {2, 4, 2.0, 3.4, 0.18}, 0.010, Modality::color};
  specs[1] = {1, "low_contrast", {1.00, 1.5}, 0.45, {2, 4, 2.0, 3.4, 0.18}, 0.018, Modality::color};
  specs[2] = {2, "thin_vessels", {1.20, 3.0}, 0.85, {3, 5, 1.9, 3.2, 0.24}, 0.008, Modality::color};
  specs[3] = {3, "angiography", {1.05, 2.0}, 1.10, {2, 4, 2.2, 3.6, 0.18}, 0.020,
              Modality::angiography};
  return specs;
}

void BenchmarkManifest::validate() const {
  if (image_size % 16 != 0)
    throw std::invalid_argument("manifest: image_size must be divisible by 16");
  if (train_per_domain < 1 || test_per_domain < 1)
    throw std::invalid_argument("manifest: per-domain sample counts must be at least 1");
  if (domains.empty()) throw std::invalid_argument("manifest: no domains");
  std::set<int> ids;
  for (const auto& d : domains) {
    d.validate();
    if (!ids.insert(d.domain_id).second)
      throw std::invalid_argument("manifest: duplicate domain_id " + std::to_string(d.domain_id));
  }
}

BenchmarkManifest default_manifest() {
  BenchmarkManifest m;
  m.domains = default_benchmark_specs();
  return m;
}

namespace {

nlohmann::json spec_to_json(const DomainSpec& s) {
  return {{"domain_id", s.domain_id},
          {"name", s.name},
          {"illumination", {{"center_gain", s.illumination.center_gain},
                            {"falloff_exp", s.illumination.falloff_exp}}},
          {"contrast", s.contrast},
          {"vessels", {{"branch_min", s.vessels.branch_min},
                       {"branch_max", s.vessels.branch_max},
                       {"width_min", s.vessels.width_min},
                       {"width_max", s.vessels.width_max},
                       {"tortuosity", s.vessels.tortuosity}}},
          {"noise_std", s.noise_std},
          {"modality", s.modality == Modality::angiography ? "angiography" : "color"}};
}

DomainSpec spec_from_json(const nlohmann::json& j) {
  DomainSpec s;
  s.domain_id = j.at("domain_id").get<int>();
  s.name = j.at("name").get<std::string>();
  s.illumination.center_gain = j.at("illumination").at("center_gain").get<double>();
  s.illumination.falloff_exp = j.at("illumination").at("falloff_exp").get<double>();
  s.contrast = j.at("contrast").get<double>();
  const auto& v = j.at("vessels");
  s.vessels.branch_min = v.at("branch_min").get<int>();
  s.vessels.branch_max = v.at("branch_max").get<int>();
  s.vessels.width_min = v.at("width_min").get<double>();
  s.vessels.width_max = v.at("width_max").get<double>();
  s.vessels.tortuosity = v.at("tortuosity").get<double>();
  s.noise_std = j.at("noise_std").get<double>();
  const std::string mod = j.at("modality").get<std::string>();
  if (mod == "angiography") s.modality = Modality::angiography;
  else if (mod == "color") s.modality = Modality::color;
  else throw std::invalid_argument("manifest: unknown modality '" + mod + "'");
  return s;
}

}  // namespace

void save_manifest(const std::string& path, const BenchmarkManifest& m) {
  m.validate();
  nlohmann::json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["image_size"] = m.image_size;
  j["train_per_domain"] = m.train_per_domain;
  j["test_per_domain"] = m.test_per_domain;
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : m.domains) domains.push_back(spec_to_json(d));
  j["domains"] = std::move(domains);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(1) << "\n";
}

BenchmarkManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  BenchmarkManifest m;
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.image_size = j.at("image_size").get<int>();
  m.train_per_domain = j.at("train_per_domain").get<int>();
  m.test_per_domain = j.at("test_per_domain").get<int>();
  for (const auto& d : j.at("domains")) m.domains.push_back(spec_from_json(d));
  m.validate();
  return m;
}

std::vector<DomainData> materialize(const BenchmarkManifest& m) {
  m.validate();
  std::vector<DomainData> out;
  out.reserve(m.domains.size());
  for (const auto& spec : m.domains) {
    DomainData d;
    d.train = generate_domain(spec, m.train_per_domain,
                              seed_split(m.seed, "train", static_cast<std::uint64_t>(spec.domain_id)),
                              m.image_size);
    d.train.split = Split::train;
    d.test = generate_domain(spec, m.test_per_domain,
                             seed_split(m.seed, "test", static_cast<std::uint64_t>(spec.domain_id)),
                             m.image_size);
    d.test.split = Split::test;
    out.push_back(std::move(d));
  }
  return out;
}

DomainDataset load_folder(const std::string& image_dir, const std::string& mask_dir, int domain_id) {
  auto stems_of = [](const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("load_folder: not a directory: " + dir);
    std::map<std::string, fs::path> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string ext = entry.path().extension().string();
      if (ext == ".png" || ext == ".ppm" || ext == ".pgm")
        stems[entry.path().stem().string()] = entry.path();
    }
    return stems;
  };
  const auto images = stems_of(image_dir);
  const auto masks = stems_of(mask_dir);
  if (images.empty()) throw std::runtime_error("load_folder: no samples in " + image_dir);

  DomainDataset ds;
  ds.domain_id = domain_id;
  for (const auto& [stem, img_path] : images) {
    const auto mit = masks.find(stem);
    if (mit == masks.end())
      throw std::runtime_error("load_folder: image '" + img_path.string() + "' has no mask with stem '" +
                               stem + "' in " + mask_dir);
    Sample s;
    s.image.pixels = load_image_rgb(img_path.string());
    s.image.domain_id = domain_id;
    Tensor gray = load_image_gray(mit->second.string());
    if (gray.shape[0] != s.image.pixels.shape[1] || gray.shape[1] != s.image.pixels.shape[2])
      throw std::runtime_error("load_folder: size mismatch between '" + img_path.string() + "' " +
                               s.image.pixels.shape_str() + " and '" + mit->second.string() + "' " +
                               gray.shape_str());
    s.mask = Tensor(gray.shape);
    for (std::size_t i = 0; i < gray.values.size(); ++i)
      s.mask.values[i] = gray.values[i] >= 0.5 ? 1.0 : 0.0;
    ds.samples.push_back(std::move(s));
  }
  for (const auto& [stem, mask_path] : masks)
    if (!images.count(stem))
      throw std::runtime_error("load_folder: mask '" + mask_path.string() + "' has no matching image");
  return ds;
}

namespace {

Tensor resize_bilinear_2d(const Tensor& in, int out_h, int out_w) {
  const int h = in.shape[0], w = in.shape[1];
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      out.at2(oy, ox) = (1 - ty) * ((1 - tx) * in.at2(y0, x0) + tx * in.at2(y0, x1)) +
                        ty * ((1 - tx) * in.at2(y1, x0) + tx * in.at2(y1, x1));
    }
  }
  return out;
}

}  // namespace

Image preprocess(const Image& raw, const PreprocessConfig& config, GeometryMap* map_out) {
  if (config.target_size % 16 != 0)
    throw std::invalid_argument("preprocess: target_size " + std::to_string(config.target_size) +
                                " not divisible by 16");
  const Tensor& px = raw.pixels;
  if (px.rank() != 3 || px.shape[0] != 3)
    throw std::invalid_argument("preprocess: expected {3,H,W} pixels, got " + px.shape_str());
  if (!px.all_finite()) throw std::invalid_argument("preprocess: non-finite pixels");

  const int h = px.shape[1], w = px.shape[2], t = config.target_size;
  const double scale = static_cast<double>(t) / std::max(h, w);
  GeometryMap map;
  map.orig_h = h;
  map.orig_w = w;
  map.target = t;
  map.content_h = std::max(1, static_cast<int>(std::lround(h * scale)));
  map.content_w = std::max(1, static_cast<int>(std::lround(w * scale)));
  if (map_out) *map_out = map;

  Image out;
  out.domain_id = raw.domain_id;
  out.pixels = Tensor({3, t, t});
  const std::size_t hw_in = static_cast<std::size_t>(h) * w;
  const std::size_t hw_out = static_cast<std::size_t>(t) * t;
  for (int c = 0; c < 3; ++c) {
    Tensor plane({h, w});
    std::copy(px.values.begin() + c * hw_in, px.values.begin() + (c + 1) * hw_in,
              plane.values.begin());
    Tensor resized = resize_bilinear_2d(plane, map.content_h, map.content_w);
    for (int y = 0; y < map.content_h; ++y)
      for (int x = 0; x < map.content_w; ++x)
        out.pixels.values[c * hw_out + static_cast<std::size_t>(y) * t + x] =
            (resized.at2(y, x) - config.mean[c]) / config.stddev[c];
  }
  return out;
}

Tensor preprocess_mask(const Tensor& mask, const GeometryMap& map) {
  if (mask.rank() != 2 || mask.shape[0] != map.orig_h || mask.shape[1] != map.orig_w)
    throw std::invalid_argument("preprocess_mask: mask shape does not match geometry");
  Tensor resized = resize_bilinear_2d(mask, map.content_h, map.content_w);
  Tensor out({map.target, map.target});
  for (int y = 0; y < map.content_h; ++y)
    for (int x = 0; x < map.content_w; ++x)
      out.at2(y, x) = resized.at2(y, x) >= 0.5 ? 1.0 : 0.0;
  return out;
}

Tensor backproject_mask(const Tensor& mask_in_target_frame, const GeometryMap& map) {
  if (mask_in_target_frame.rank() != 2 || mask_in_target_frame.shape[0] != map.target ||
      mask_in_target_frame.shape[1] != map.target)
    throw std::invalid_argument("backproject_mask: mask is not in the target frame");
  Tensor content({map.content_h, map.content_w});
  for (int y = 0; y < map.content_h; ++y)
    for (int x = 0; x < map.content_w; ++x) content.at2(y, x) = mask_in_target_frame.at2(y, x);
  Tensor resized = resize_bilinear_2d(content, map.orig_h, map.orig_w);
  for (auto& v : resized.values) v = v >= 0.5 ? 1.0 : 0.0;
  return resized;
}

std::uint64_t sample_fingerprint(const Sample& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::vector<double>& vals) {
    for (double v : vals) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
  };
  mix(s.image.pixels.values);
  mix(s.mask.values);
  return h;
}

}  // namespace wavedg
