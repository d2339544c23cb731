#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wavedg/encoder.hpp"
#include "wavedg/tensor.hpp"

namespace wavedg {

enum class Modality { color, angiography };

struct IlluminationSpec {
  double center_gain = 1.0;   // brightness multiplier at the image center; 1 = flat field
  double falloff_exp = 2.0;   // radial exponent shaping the center-to-edge decay
};

struct VesselStyle {
  int branch_min = 2;
  int branch_max = 4;
  double width_min = 1.2;  // px
  double width_max = 2.4;  // px
  double tortuosity = 0.18;
};

struct DomainSpec {
  int domain_id = 0;
  std::string name;
  IlluminationSpec illumination;
  double contrast = 1.0;
  VesselStyle vessels;
  double noise_std = 0.01;
  Modality modality = Modality::color;

  void validate() const;
};

struct Sample {
  Image image;  // {3,H,W} raw pixels in [0,1]
  Tensor mask;  // {H,W} strictly binary
};

enum class Split { train, test };

struct DomainDataset {
  int domain_id = 0;
  Split split = Split::train;
  std::vector<Sample> samples;
};

// Deterministic synthetic vessel dataset: recursive branching random walks
// rendered with anti-aliased strokes, composited over the domain's
// illumination field with its contrast and noise settings. Angiography
// renders bright vessels on a dark background.
DomainDataset generate_domain(const DomainSpec& spec, int n, std::uint64_t seed,
                              int image_size = 64);

// The four domain specs shipped with the benchmark: (A) strong bright-center
// vignette, (B) low contrast, (C) thin high-tortuosity vessels, (D) inverted
// polarity angiography analog.
std::vector<DomainSpec> default_benchmark_specs();

struct BenchmarkManifest {
  int version = 1;
  std::uint64_t seed = 42;
  int image_size = 64;
  int train_per_domain = 20;
  int test_per_domain = 5;
  std::vector<DomainSpec> domains;

  void validate() const;
};

BenchmarkManifest default_manifest();
void save_manifest(const std::string& path, const BenchmarkManifest& m);
BenchmarkManifest load_manifest(const std::string& path);

struct DomainData {
  DomainDataset train;
  DomainDataset test;
};

// Regenerates every domain's train/test split from the manifest. Splits use
// independent derived seeds, so train and test never share samples.
std::vector<DomainData> materialize(const BenchmarkManifest& m);

// --- Folder ingestion ----------------------------------------------------

// Pairs image/mask files by filename stem; masks binarize at 50% intensity.
DomainDataset load_folder(const std::string& image_dir, const std::string& mask_dir,
                          int domain_id = 0);

// --- Preprocessing -------------------------------------------------------

struct PreprocessConfig {
  int target_size = 64;  // must be divisible by 16
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
};

// Records the forward geometry so predictions can be mapped back onto the
// original frame.
struct GeometryMap {
  int orig_h = 0, orig_w = 0;
  int content_h = 0, content_w = 0;  // resized extent before padding
  int target = 0;
};

// Longest-side resize, bottom-right zero padding to a square target, then
// per-channel standardization (padding stays at 0, i.e. the channel mean).
Image preprocess(const Image& raw, const PreprocessConfig& config, GeometryMap* map_out = nullptr);

// Maps a binary mask into the preprocessed frame (bilinear + 0.5 threshold).
Tensor preprocess_mask(const Tensor& mask, const GeometryMap& map);

// Inverse geometric mapping: crop the content region and resize back.
Tensor backproject_mask(const Tensor& mask_in_target_frame, const GeometryMap& map);

// Content hash used for split-hygiene fingerprints.
std::uint64_t sample_fingerprint(const Sample& s);

}  // namespace wavedg
