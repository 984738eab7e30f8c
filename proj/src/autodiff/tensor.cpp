#include "faircl/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "faircl/error.hpp"

namespace faircl {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents(shape_);
    if (shape_size(shape_) != values_.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

double Tensor::item() const {
    if (values_.size() != 1) {
        throw ShapeError("tensor: item() on tensor of shape " + shape_str(shape_));
    }
    return values_[0];
}

std::span<const double> Tensor::grad() const {
    if (!grad_) throw ContractError("tensor: gradient not populated");
    return *grad_;
}

std::span<double> Tensor::grad() {
    if (!grad_) throw ContractError("tensor: gradient not populated");
    return *grad_;
}

void Tensor::zero_grad() {
    if (grad_) {
        std::fill(grad_->begin(), grad_->end(), 0.0);
    } else {
        grad_.emplace(values_.size(), 0.0);
    }
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw ValidationError("parameter set: duplicate name '" + name + "'");
    value.set_requires_grad(true);
    entries_.push_back(Entry{std::move(name), std::move(value)});
    return entries_.back().tensor;
}

bool ParameterSet::contains(std::string_view name) const noexcept {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.name == name; });
}

Tensor& ParameterSet::at(std::string_view name) {
    for (auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw IndexError("parameter set: no entry named '" + std::string(name) + "'");
}

const Tensor& ParameterSet::at(std::string_view name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw IndexError("parameter set: no entry named '" + std::string(name) + "'");
}

std::size_t ParameterSet::total_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

std::vector<double> ParameterSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_count());
    for (const auto& e : entries_) {
        auto v = e.tensor.values();
        flat.insert(flat.end(), v.begin(), v.end());
    }
    return flat;
}

void ParameterSet::assign_flat(std::span<const double> flat) {
    if (flat.size() != total_count()) {
        throw ShapeError("parameter set: flat assignment of " + std::to_string(flat.size()) +
                         " values into " + std::to_string(total_count()));
    }
    std::size_t off = 0;
    for (auto& e : entries_) {
        auto v = e.tensor.values();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
        off += v.size();
    }
}

ParamArrays ParameterSet::values() const {
    ParamArrays out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        auto v = e.tensor.values();
        out.emplace_back(v.begin(), v.end());
    }
    return out;
}

ParamArrays ParameterSet::grads() const {
    ParamArrays out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        auto g = e.tensor.grad();
        out.emplace_back(g.begin(), g.end());
    }
    return out;
}

void ParameterSet::assign(const ParamArrays& arrays) {
    if (arrays.size() != entries_.size()) {
        throw ShapeError("parameter set: assigning " + std::to_string(arrays.size()) +
                         " arrays to " + std::to_string(entries_.size()) + " entries");
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        auto v = entries_[i].tensor.values();
        if (arrays[i].size() != v.size()) {
            throw ShapeError("parameter set: array size mismatch for '" + entries_[i].name + "'");
        }
        std::copy(arrays[i].begin(), arrays[i].end(), v.begin());
    }
}

ParamArrays ParameterSet::zeros_like() const {
    ParamArrays out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.tensor.size(), 0.0);
    return out;
}

bool ParameterSet::same_layout(const ParameterSet& other) const noexcept {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name ||
            entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) {
            return false;
        }
    }
    return true;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, std::span<const double> values) {
    for (double v : values) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= kFnvPrime;
        }
    }
}

}  // namespace

std::uint64_t ParameterSet::checksum() const noexcept {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : entries_) fnv_mix(h, e.tensor.values());
    return h;
}

std::uint64_t ParameterSet::checksum(const Tensor& t) noexcept {
    std::uint64_t h = kFnvOffset;
    fnv_mix(h, t.values());
    return h;
}

}  // namespace faircl
