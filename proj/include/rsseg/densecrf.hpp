#ifndef RSSEG_DENSECRF_HPP
#define RSSEG_DENSECRF_HPP

#include <cstddef>
#include <vector>

#include "rsseg/tensor.hpp"

namespace rsseg::crf {

struct CrfParams {
  double w1 = 10.0;          // appearance kernel weight
  double w2 = 3.0;           // smoothness kernel weight
  double sigma_alpha = 80.0; // appearance, spatial
  double sigma_beta = 13.0;  // appearance, color
  double sigma_gamma = 3.0;  // smoothness, spatial
  int iterations = 10;

  void validate() const;
};

/// Per-pixel feature vectors, row-major pixel order, `dim` values per pixel.
struct FeatureField {
  std::size_t dim = 0;
  std::size_t pixels = 0;
  std::vector<double> f;  // pixels * dim

  const double* at(std::size_t i) const { return f.data() + i * dim; }
  double* at(std::size_t i) { return f.data() + i * dim; }
};

/// Spatial features (y, x) scaled by 1/sigma.
FeatureField spatial_features(std::size_t h, std::size_t w, double sigma);
/// Spatial + color features (y/sa, x/sa, I1/sb, I2/sb, I3/sb) from a
/// (1, C, H, W) image; all C channels enter the color part.
FeatureField bilateral_features(const Tensor& image, double sigma_spatial,
                                double sigma_color);

/// theta_u = -log(max(P, 1e-12)), same layout as the probability field.
Tensor unary_from_probs(const Tensor& probs);

/// Eq-2-style two-kernel evaluation on raw (unscaled) features.
/// fi/fj: position (2) then color (3).
double kernel_eval(const double* pi, const double* pj, const double* ci, const double* cj,
                   std::size_t color_dim, const CrfParams& p);

/// Potts compatibility: 0 when equal, 1 otherwise.
inline int potts(int a, int b) { return a == b ? 0 : 1; }

/// Gibbs energy over ordered pairs i != j (each unordered pair counted
/// twice). Brute force; guarded against large inputs.
double energy(const LabelMap& labels, const Tensor& unary, const Tensor& image,
              const CrfParams& p, std::size_t guard = 10000);

/// Exact Gaussian filtering with unit-variance kernel on pre-scaled features:
/// out_i = sum_{j != i} exp(-||f_i - f_j||^2 / 2) v_j.
/// `values` is channel-major: channel c of pixel i at values[c * pixels + i].
std::vector<double> gaussian_filter_bruteforce(const std::vector<double>& values,
                                               std::size_t channels,
                                               const FeatureField& features,
                                               std::size_t guard = 10000);

/// Approximate Gaussian filtering via a permutohedral lattice
/// (embed, splat, blur along d+1 directions, slice). Same conventions as the
/// brute-force oracle, self term subtracted. The filter averages a few
/// phase-shifted lattice replicas to suppress discretization noise, and the
/// lattice point set is closed under the blur stencil so no mass is dropped.
class Permutohedral {
public:
  explicit Permutohedral(const FeatureField& features, int replicas = 4);

  /// Filter `channels` value planes laid out channel-major; self-excluded.
  std::vector<double> filter(const std::vector<double>& values,
                             std::size_t channels) const;

private:
  struct Lattice {
    std::size_t points = 0;
    std::vector<int> offsets;        // pixels * (d+1), lattice point per simplex vertex
    std::vector<double> barycentric; // pixels * (d+1)
    std::vector<int> blur_neighbors; // points * (d+1) * 2, -1 = absent
  };

  std::size_t pixels_ = 0;
  std::size_t d_ = 0;
  double amplitude_ = 1.0;
  std::vector<Lattice> lattices_;
};

std::vector<double> permutohedral_filter(const std::vector<double>& values,
                                         std::size_t channels,
                                         const FeatureField& features);

enum class FilterPath { Lattice, BruteForce };

struct InferenceResult {
  Tensor q;        // (1, K, H, W), rows sum to 1
  LabelMap labels; // per-pixel argmax, ties to the lowest index
};

/// Mean-field inference. `image` supplies the color bands of the appearance
/// kernel and must match the unary's spatial extent.
InferenceResult meanfield_infer(const Tensor& unary, const Tensor& image,
                                const CrfParams& p,
                                FilterPath path = FilterPath::Lattice);

}  // namespace rsseg::crf

#endif
