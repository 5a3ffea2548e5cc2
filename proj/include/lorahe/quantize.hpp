#pragma once

// Integer quantization for the split linear layer: affine and symmetric
// schemes with static or dynamic ranges, at per-tensor, per-channel (rows of
// a weight matrix) or per-token (rows of an activation matrix) granularity.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lorahe {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Scale floor for degenerate (constant) ranges.
inline constexpr double kScaleEpsilon = 0x1.0p-24;

enum class Scheme { kAffine, kSymmetric };
enum class Granularity { kPerTensor, kPerChannel, kPerToken };
enum class RangeMode { kStatic, kDynamic };

/// Scale and zero point, one pair per tensor or one per row.
struct QuantParams {
  std::vector<double> scale;
  std::vector<int64_t> zero_point;
  int bits = 8;
  Scheme scheme = Scheme::kSymmetric;
  Granularity granularity = Granularity::kPerTensor;

  bool per_row() const noexcept { return granularity != Granularity::kPerTensor; }
  double scale_at(std::size_t row) const { return scale.at(per_row() ? row : 0); }
  int64_t zero_point_at(std::size_t row) const { return zero_point.at(per_row() ? row : 0); }
  int64_t q_min() const noexcept;
  int64_t q_max() const noexcept;
};

struct QuantTensor {
  std::vector<int64_t> data;  // row-major
  std::size_t rows = 0;
  std::size_t cols = 0;
  QuantParams params;

  std::span<const int64_t> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// Round half up.
int64_t round_half_up(double x) noexcept;

QuantParams calibrate_affine(double x_min, double x_max, int bits);
QuantParams calibrate_symmetric(double abs_max, int bits);

/// Ranges taken from `t` itself at the requested granularity.
QuantParams calibrate_dynamic(const Matrix& t, Scheme scheme, Granularity granularity, int bits);

/// Applies given parameters, saturating out-of-range values.
QuantTensor quantize(const Matrix& t, const QuantParams& params);
QuantTensor quantize_dynamic(const Matrix& t, Scheme scheme, Granularity granularity, int bits);
Matrix dequantize(const QuantTensor& q);

/// y[i][j] = s_x[i] * s_w[j] * acc[i][j] for an (tokens x d_out) accumulator of
/// a symmetric x symmetric product. s_x is per tensor or per token (rows),
/// s_w per tensor or per output channel (columns of y).
Matrix rescale_output(std::span<const int64_t> acc, std::size_t rows, std::size_t cols, const QuantParams& sx,
                      const QuantParams& sw);

/// Running range over a calibration batch, for static activation quantization.
class RangeTracker {
 public:
  void observe(const Matrix& t);
  bool empty() const noexcept { return !seen_; }
  double min() const noexcept { return min_; }
  double max() const noexcept { return max_; }
  double abs_max() const noexcept;
  QuantParams params(Scheme scheme, int bits) const;

 private:
  bool seen_ = false;
  double min_ = 0.0;
  double max_ = 0.0;
};

struct TensorStrategy {
  RangeMode mode = RangeMode::kDynamic;
  Granularity granularity = Granularity::kPerToken;
};

/// Activation/weight strategy pair written as e.g. "DTok-SC".
struct QuantStrategy {
  TensorStrategy activation;
  TensorStrategy weight;
  int bits = 8;

  std::string name() const;
};

/// Parses "ST-ST", "DT-ST", "DT-SC", "DTok-ST" or "DTok-SC".
QuantStrategy parse_strategy(std::string_view text, int bits);

}  // namespace lorahe
