#include "msac/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace msac {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

namespace memtrack {

namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

void track_add(std::size_t b) {
  std::size_t now = g_live.fetch_add(b) + b;
  std::size_t prev = g_peak.load();
  while (now > prev && !g_peak.compare_exchange_weak(prev, now)) {
  }
}

void track_sub(std::size_t b) { g_live.fetch_sub(b); }
}  // namespace

std::size_t live_bytes() { return g_live.load(); }
std::size_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_live.load()); }

Registration::Registration(std::size_t b) : bytes(b) { track_add(b); }
Registration::Registration(const Registration& o) : Registration(o.bytes) {}
Registration::Registration(Registration&& o) noexcept : bytes(o.bytes) { o.bytes = 0; }
Registration& Registration::operator=(const Registration& o) {
  if (this != &o) {
    track_sub(bytes);
    bytes = o.bytes;
    track_add(bytes);
  }
  return *this;
}
Registration& Registration::operator=(Registration&& o) noexcept {
  if (this != &o) {
    track_sub(bytes);
    bytes = o.bytes;
    o.bytes = 0;
  }
  return *this;
}
Registration::~Registration() { track_sub(bytes); }

}  // namespace memtrack

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (std::size_t s : shape_)
    require(s >= 1, "tensor shape entries must be >= 1, got " + shape_to_string(shape_));
  data_.assign(shape_numel(shape_), 0.0);
  reg_ = memtrack::Registration(data_.size() * sizeof(double));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t s : shape_)
    require(s >= 1, "tensor shape entries must be >= 1, got " + shape_to_string(shape_));
  require(shape_numel(shape_) == data_.size(),
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_to_string(shape_));
  reg_ = memtrack::Registration(data_.size() * sizeof(double));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = v;
  return t;
}

double Tensor::item() const {
  require(size() == 1, "item() requires a single-element tensor, got " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "elementwise add: shape mismatch " + shape_to_string(a.shape()) +
                               " vs " + shape_to_string(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "elementwise sub: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
  return out;
}

void add_in_place(Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add_in_place: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void axpy_in_place(Tensor& a, double c, const Tensor& b) {
  require(a.same_shape(b), "axpy_in_place: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += c * b[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  require(a.same_shape(b), "max_rel_diff: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

FilterBank::FilterBank(Tensor t) : tensor(std::move(t)) {
  require(tensor.rank() >= 4,
          "filter bank rank must be >= 4 (leading filter axes plus n,m,d), got " +
              shape_to_string(tensor.shape()));
}

std::size_t FilterBank::filter_count() const {
  std::size_t f = 1;
  for (std::size_t i = 0; i + 3 < tensor.rank(); ++i) f *= tensor.dim(i);
  return f;
}

}  // namespace msac
