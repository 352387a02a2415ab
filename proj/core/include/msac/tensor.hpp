#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace msac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Throws std::invalid_argument when cond is false.
void require(bool cond, const std::string& what);

namespace memtrack {
// Live payload bytes of all Tensor objects currently alive, and the high-water
// mark since the last reset. The bench harness reads these per operator run.
std::size_t live_bytes();
std::size_t peak_bytes();
void reset_peak();

struct Registration {
  std::size_t bytes = 0;
  Registration() = default;
  explicit Registration(std::size_t b);
  Registration(const Registration& o);
  Registration(Registration&& o) noexcept;
  Registration& operator=(const Registration& o);
  Registration& operator=(Registration&& o) noexcept;
  ~Registration();
};
}  // namespace memtrack

// Dense rank-R tensor of 64-bit floats, row-major flat storage.
// Treated as immutable once handed to an operator; in-place mutation is
// reserved for construction sites and parameter updates in the training loop.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}  // rank-0 scalar holding 0.0
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);

  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  // Value of the single element of a rank-0/size-1 tensor.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  memtrack::Registration reg_;
};

// Elementwise helpers shared by kernels, the tape and tests.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
void add_in_place(Tensor& a, const Tensor& b);
void axpy_in_place(Tensor& a, double c, const Tensor& b);  // a += c*b
double max_abs_diff(const Tensor& a, const Tensor& b);
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-12);

// Filter bank: leading filter axes, trailing (n, m, d) spatial+channel axes.
// Rank must be at least 4 so there is at least one filter axis.
struct FilterBank {
  Tensor tensor;

  FilterBank() = default;
  explicit FilterBank(Tensor t);

  std::size_t lead_rank() const { return tensor.rank() - 3; }
  std::size_t filter_count() const;                  // product of leading axes
  std::size_t n() const { return tensor.dim(tensor.rank() - 3); }
  std::size_t m() const { return tensor.dim(tensor.rank() - 2); }
  std::size_t d() const { return tensor.dim(tensor.rank() - 1); }
};

}  // namespace msac
