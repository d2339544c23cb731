#include "wavedg/fadf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "wavedg/autograd.hpp"

namespace wavedg {

namespace {

// Neumaier compensated accumulator.
struct CompensatedSum {
  double sum = 0.0, comp = 0.0;
  void add(double v) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

std::vector<double> spatial_mean(const Tensor& t) {
  const int c = t.shape[0];
  const std::size_t hw = static_cast<std::size_t>(t.shape[1]) * t.shape[2];
  std::vector<double> out(c);
  for (int ic = 0; ic < c; ++ic) {
    CompensatedSum acc;
    const double* p = t.data() + ic * hw;
    for (std::size_t i = 0; i < hw; ++i) acc.add(p[i]);
    out[ic] = acc.value() / static_cast<double>(hw);
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b, const char* a_name,
              const char* b_name) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0)
    throw std::domain_error(std::string("similarity: zero-norm vector ") + a_name +
                            " (degenerate prototype)");
  if (nb == 0.0)
    throw std::domain_error(std::string("similarity: zero-norm vector ") + b_name +
                            " (degenerate prototype)");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::min(1.0, std::max(-1.0, c));
}

}  // namespace

int DomainWeights::argmax() const {
  return static_cast<int>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

Decomposer sdm_decomposer(const SdmModule& sdm) {
  // A disabled branch yields a default (empty) tensor; the prototype side of
  // that branch stays empty and similarity averages over present branches.
  return [&sdm](const Tensor& feature) {
    ag::NoGradGuard ng;
    auto [low, high] = sdm.decompose(ag::constant(feature));
    Tensor lo = low ? low->value : Tensor();
    Tensor hi = high ? high->value : Tensor();
    return std::make_pair(std::move(lo), std::move(hi));
  };
}

FrequencyPrototype compute_prototype(const std::vector<Tensor>& features, int domain_id,
                                     const Decomposer& decomposer) {
  if (features.empty()) throw std::invalid_argument("compute_prototype: empty feature list");
  const int c = features.front().shape[0];
  for (const auto& f : features)
    if (f.rank() != 3 || f.shape[0] != c)
      throw std::invalid_argument("compute_prototype: features must share a channel count");

  std::vector<CompensatedSum> low, high;
  for (const auto& f : features) {
    auto [lo, hi] = decomposer(f);
    if (&f == &features.front()) {
      low.resize(lo.values.empty() ? 0 : c);
      high.resize(hi.values.empty() ? 0 : c);
    }
    if (!low.empty()) {
      const auto lo_mean = spatial_mean(lo);
      for (int i = 0; i < c; ++i) low[i].add(lo_mean[i]);
    }
    if (!high.empty()) {
      const auto hi_mean = spatial_mean(hi);
      for (int i = 0; i < c; ++i) high[i].add(hi_mean[i]);
    }
  }
  if (low.empty() && high.empty())
    throw std::invalid_argument("compute_prototype: decomposer produced no frequency components");
  FrequencyPrototype proto;
  proto.domain_id = domain_id;
  proto.sample_count = static_cast<int>(features.size());
  proto.low.resize(low.size());
  proto.high.resize(high.size());
  const double inv = 1.0 / static_cast<double>(features.size());
  for (std::size_t i = 0; i < low.size(); ++i) proto.low[i] = low[i].value() * inv;
  for (std::size_t i = 0; i < high.size(); ++i) proto.high[i] = high[i].value() * inv;
  return proto;
}

FrequencyPrototype frequency_signature(const Tensor& feature, const Decomposer& decomposer) {
  return compute_prototype({feature}, -1, decomposer);
}

double similarity(const FrequencyPrototype& test, const FrequencyPrototype& domain) {
  if (test.low.size() != domain.low.size() || test.high.size() != domain.high.size())
    throw std::invalid_argument("similarity: prototype widths differ");
  double acc = 0.0;
  int terms = 0;
  if (!test.low.empty()) {
    acc += cosine(test.low, domain.low, "test.low", "domain.low");
    ++terms;
  }
  if (!test.high.empty()) {
    acc += cosine(test.high, domain.high, "test.high", "domain.high");
    ++terms;
  }
  if (terms == 0) throw std::invalid_argument("similarity: prototypes carry no frequency vectors");
  return acc / terms;
}

DomainWeights fusion_weights(const std::vector<double>& similarities, double tau) {
  if (similarities.empty()) throw std::invalid_argument("fusion_weights: no similarities");
  if (!(tau > 0.0)) throw std::invalid_argument("fusion_weights: tau must be positive");
  for (double s : similarities)
    if (!std::isfinite(s)) throw std::invalid_argument("fusion_weights: non-finite similarity");

  DomainWeights dw;
  dw.similarities = similarities;
  dw.temperature = tau;
  const double mx = *std::max_element(similarities.begin(), similarities.end());
  dw.weights.resize(similarities.size());
  double z = 0.0;
  for (std::size_t k = 0; k < similarities.size(); ++k)
    z += (dw.weights[k] = std::exp((similarities[k] - mx) / tau));
  for (auto& w : dw.weights) w /= z;
  return dw;
}

Tensor fuse(const std::vector<Tensor>& domain_variants, const DomainWeights& weights) {
  if (domain_variants.empty()) throw std::invalid_argument("fuse: no variants");
  if (domain_variants.size() != weights.weights.size())
    throw std::invalid_argument("fuse: variant/weight count mismatch");
  const auto& shape = domain_variants.front().shape;
  for (const auto& v : domain_variants)
    if (v.shape != shape) throw std::invalid_argument("fuse: variant shapes differ");

  Tensor out = Tensor::zeros(shape);
  for (std::size_t k = 0; k < domain_variants.size(); ++k) {
    const double w = weights.weights[k];
    const double* src = domain_variants[k].data();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += w * src[i];
  }
  return out;
}

Tensor infer_fused(const Tensor& test_feature, const std::vector<FrequencyPrototype>& prototypes,
                   const SdmModule& sdm, double tau, DomainWeights* weights_out) {
  const int k = sdm.num_domains();
  std::vector<const FrequencyPrototype*> by_domain(k, nullptr);
  for (const auto& p : prototypes)
    if (p.domain_id >= 0 && p.domain_id < k) by_domain[p.domain_id] = &p;
  for (int d = 0; d < k; ++d)
    if (!by_domain[d])
      throw std::invalid_argument("infer_fused: missing prototype for domain " + std::to_string(d));

  const auto sig = frequency_signature(test_feature, sdm_decomposer(sdm));
  std::vector<double> sims(k);
  for (int d = 0; d < k; ++d) sims[d] = similarity(sig, *by_domain[d]);
  const DomainWeights dw = fusion_weights(sims, tau);
  if (weights_out) *weights_out = dw;

  ag::NoGradGuard ng;
  auto f_wave = sdm.frequency_features(ag::constant(test_feature));
  std::vector<Tensor> variants;
  variants.reserve(k);
  for (int d = 0; d < k; ++d) variants.push_back(sdm.modulate(f_wave, d)->value);
  return fuse(variants, dw);
}

void save_prototypes(const std::string& path, const std::vector<FrequencyPrototype>& prototypes,
                     int channels) {
  nlohmann::json j;
  j["version"] = kPrototypeStoreVersion;
  j["C"] = channels;
  j["K"] = prototypes.size();
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& p : prototypes) {
    domains.push_back({{"domain_id", p.domain_id},
                       {"sample_count", p.sample_count},
                       {"low", p.low},
                       {"high", p.high}});
  }
  j["domains"] = std::move(domains);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prototype store: " + path);
  out << j.dump(1) << "\n";
}

std::vector<FrequencyPrototype> load_prototypes(const std::string& path, int* channels_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prototype store: " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("version").get<int>() != kPrototypeStoreVersion)
    throw std::runtime_error("prototype store " + path + ": unsupported version");
  const int c = j.at("C").get<int>();
  if (channels_out) *channels_out = c;
  std::vector<FrequencyPrototype> protos;
  for (const auto& d : j.at("domains")) {
    FrequencyPrototype p;
    p.domain_id = d.at("domain_id").get<int>();
    p.sample_count = d.at("sample_count").get<int>();
    d.at("low").get_to(p.low);
    d.at("high").get_to(p.high);
    const auto width_ok = [c](const std::vector<double>& v) {
      return v.empty() || static_cast<int>(v.size()) == c;
    };
    if (!width_ok(p.low) || !width_ok(p.high))
      throw std::runtime_error("prototype store " + path + ": vector width differs from C");
    protos.push_back(std::move(p));
  }
  if (protos.size() != j.at("K").get<std::size_t>())
    throw std::runtime_error("prototype store " + path + ": K does not match entry count");
  return protos;
}

}  // namespace wavedg
