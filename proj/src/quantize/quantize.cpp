#include "lorahe/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lorahe {

namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 32) throw std::invalid_argument("quantization bits must lie in [2, 32]");
}

}  // namespace

int64_t QuantParams::q_min() const noexcept {
  return scheme == Scheme::kAffine ? 0 : -(int64_t{1} << (bits - 1));
}

int64_t QuantParams::q_max() const noexcept {
  return scheme == Scheme::kAffine ? (int64_t{1} << bits) - 1 : (int64_t{1} << (bits - 1)) - 1;
}

int64_t round_half_up(double x) noexcept { return static_cast<int64_t>(std::floor(x + 0.5)); }

QuantParams calibrate_affine(double x_min, double x_max, int bits) {
  check_bits(bits);
  if (!(x_max >= x_min)) throw std::invalid_argument("calibrate_affine: x_max < x_min");
  QuantParams p;
  p.bits = bits;
  p.scheme = Scheme::kAffine;
  const double levels = std::ldexp(1.0, bits) - 1.0;
  double s = (x_max - x_min) / levels;
  if (s < kScaleEpsilon) {
    p.scale = {kScaleEpsilon};
    p.zero_point = {(int64_t{1} << (bits - 1)) - round_half_up(x_min / kScaleEpsilon)};
    return p;
  }
  p.scale = {s};
  p.zero_point = {round_half_up(-x_min / s)};
  return p;
}

QuantParams calibrate_symmetric(double abs_max, int bits) {
  check_bits(bits);
  if (!(abs_max >= 0.0)) throw std::invalid_argument("calibrate_symmetric: abs_max must be non-negative");
  QuantParams p;
  p.bits = bits;
  p.scheme = Scheme::kSymmetric;
  p.scale = {std::max(kScaleEpsilon, abs_max / (std::ldexp(1.0, bits - 1) - 1.0))};
  p.zero_point = {0};
  return p;
}

QuantParams calibrate_dynamic(const Matrix& t, Scheme scheme, Granularity granularity, int bits) {
  auto one = [&](auto block) {
    if (block.size() == 0) {
      return scheme == Scheme::kAffine ? calibrate_affine(0.0, 0.0, bits) : calibrate_symmetric(0.0, bits);
    }
    return scheme == Scheme::kAffine ? calibrate_affine(block.minCoeff(), block.maxCoeff(), bits)
                                     : calibrate_symmetric(block.cwiseAbs().maxCoeff(), bits);
  };
  if (granularity == Granularity::kPerTensor) {
    QuantParams p = one(t.reshaped());
    p.granularity = granularity;
    return p;
  }
  QuantParams p;
  p.bits = bits;
  p.scheme = scheme;
  p.granularity = granularity;
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    const QuantParams row = one(t.row(r));
    p.scale.push_back(row.scale[0]);
    p.zero_point.push_back(row.zero_point[0]);
  }
  return p;
}

QuantTensor quantize(const Matrix& t, const QuantParams& params) {
  check_bits(params.bits);
  const auto rows = static_cast<std::size_t>(t.rows());
  const auto cols = static_cast<std::size_t>(t.cols());
  const std::size_t expected = params.per_row() ? rows : 1;
  if (params.scale.size() != expected || params.zero_point.size() != expected) {
    throw std::invalid_argument("quantize: " + std::to_string(params.scale.size()) +
                                " scales do not match a tensor with " + std::to_string(rows) + " rows");
  }
  if (params.scheme == Scheme::kSymmetric &&
      std::any_of(params.zero_point.begin(), params.zero_point.end(), [](int64_t z) { return z != 0; })) {
    throw std::invalid_argument("quantize: symmetric parameters must have a zero zero-point");
  }
  QuantTensor q{std::vector<int64_t>(rows * cols), rows, cols, params};
  const int64_t lo = params.q_min(), hi = params.q_max();
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = params.scale_at(r);
    const int64_t zp = params.zero_point_at(r);
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) / s;
      // Clamp before converting so huge ratios cannot overflow.
      const double clamped = std::clamp(v, static_cast<double>(lo - zp) - 1.0, static_cast<double>(hi - zp) + 1.0);
      q.data[r * cols + c] = std::clamp(round_half_up(clamped) + zp, lo, hi);
    }
  }
  return q;
}

QuantTensor quantize_dynamic(const Matrix& t, Scheme scheme, Granularity granularity, int bits) {
  return quantize(t, calibrate_dynamic(t, scheme, granularity, bits));
}

Matrix dequantize(const QuantTensor& q) {
  Matrix out(static_cast<Eigen::Index>(q.rows), static_cast<Eigen::Index>(q.cols));
  for (std::size_t r = 0; r < q.rows; ++r) {
    const double s = q.params.scale_at(r);
    const int64_t zp = q.params.zero_point_at(r);
    for (std::size_t c = 0; c < q.cols; ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          s * static_cast<double>(q.data[r * q.cols + c] - zp);
    }
  }
  return out;
}

Matrix rescale_output(std::span<const int64_t> acc, std::size_t rows, std::size_t cols, const QuantParams& sx,
                      const QuantParams& sw) {
  if (acc.size() != rows * cols) throw std::invalid_argument("rescale_output: accumulator size mismatch");
  if (sx.scheme != Scheme::kSymmetric || sw.scheme != Scheme::kSymmetric) {
    throw std::invalid_argument("rescale_output: both operands must be symmetric");
  }
  if ((sx.per_row() && sx.scale.size() != rows) || (!sx.per_row() && sx.scale.size() != 1)) {
    throw std::invalid_argument("rescale_output: activation scales do not match the token count");
  }
  if ((sw.per_row() && sw.scale.size() != cols) || (!sw.per_row() && sw.scale.size() != 1)) {
    throw std::invalid_argument("rescale_output: weight scales do not match the output channels");
  }
  Matrix y(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const double s = sx.scale_at(i);
    for (std::size_t j = 0; j < cols; ++j) {
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          s * sw.scale_at(j) * static_cast<double>(acc[i * cols + j]);
    }
  }
  return y;
}

void RangeTracker::observe(const Matrix& t) {
  if (t.size() == 0) return;
  const double lo = t.minCoeff(), hi = t.maxCoeff();
  if (!seen_) {
    min_ = lo;
    max_ = hi;
    seen_ = true;
  } else {
    min_ = std::min(min_, lo);
    max_ = std::max(max_, hi);
  }
}

double RangeTracker::abs_max() const noexcept { return std::max(std::abs(min_), std::abs(max_)); }

QuantParams RangeTracker::params(Scheme scheme, int bits) const {
  if (!seen_) throw std::logic_error("static quantization used before calibration");
  return scheme == Scheme::kAffine ? calibrate_affine(min_, max_, bits) : calibrate_symmetric(abs_max(), bits);
}

namespace {

std::string tensor_code(const TensorStrategy& t) {
  std::string s = t.mode == RangeMode::kStatic ? "S" : "D";
  switch (t.granularity) {
    case Granularity::kPerTensor:
      return s + "T";
    case Granularity::kPerToken:
      return s + "Tok";
    case Granularity::kPerChannel:
      return s + "C";
  }
  return s;
}

}  // namespace

std::string QuantStrategy::name() const { return tensor_code(activation) + "-" + tensor_code(weight); }

QuantStrategy parse_strategy(std::string_view text, int bits) {
  check_bits(bits);
  QuantStrategy s;
  s.bits = bits;
  if (text == "ST-ST") {
    s.activation = {RangeMode::kStatic, Granularity::kPerTensor};
    s.weight = {RangeMode::kStatic, Granularity::kPerTensor};
  } else if (text == "DT-ST") {
    s.activation = {RangeMode::kDynamic, Granularity::kPerTensor};
    s.weight = {RangeMode::kStatic, Granularity::kPerTensor};
  } else if (text == "DT-SC") {
    s.activation = {RangeMode::kDynamic, Granularity::kPerTensor};
    s.weight = {RangeMode::kStatic, Granularity::kPerChannel};
  } else if (text == "DTok-ST") {
    s.activation = {RangeMode::kDynamic, Granularity::kPerToken};
    s.weight = {RangeMode::kStatic, Granularity::kPerTensor};
  } else if (text == "DTok-SC") {
    s.activation = {RangeMode::kDynamic, Granularity::kPerToken};
    s.weight = {RangeMode::kStatic, Granularity::kPerChannel};
  } else {
    throw std::invalid_argument("unknown quantization strategy '" + std::string(text) +
                                "' (expected ST-ST, DT-ST, DT-SC, DTok-ST or DTok-SC)");
  }
  return s;
}

}  // namespace lorahe
