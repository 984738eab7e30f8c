#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace faircl {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t shape_size(const Shape& shape);
[[nodiscard]] std::string shape_str(const Shape& shape);

/// Storage precision for values produced by the engine. Narrow rounds every
/// produced value to the nearest 32-bit float, wide keeps full doubles.
enum class Precision { wide, narrow };

[[nodiscard]] inline double round_to(Precision p, double v) {
    return p == Precision::narrow ? static_cast<double>(static_cast<float>(v)) : v;
}

/// Dense row-major array with an optional gradient of the same shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
    [[nodiscard]] double& operator[](std::size_t i) { return values_[i]; }

    /// Value of a single-element tensor.
    [[nodiscard]] double item() const;

    [[nodiscard]] bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    [[nodiscard]] bool has_grad() const noexcept { return grad_.has_value(); }
    [[nodiscard]] std::span<const double> grad() const;
    [[nodiscard]] std::span<double> grad();
    /// Allocates (if needed) and zero-fills the gradient.
    void zero_grad();
    void clear_grad() noexcept { grad_.reset(); }

    [[nodiscard]] bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<double> values_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

/// Per-parameter plain arrays aligned with a ParameterSet's entry order.
using ParamArrays = std::vector<std::vector<double>>;

/// Named, ordered trainable tensors. Entries keep stable addresses, so a
/// Graph may bind to them for the lifetime of the set.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    Tensor& add(std::string name, Tensor value);

    [[nodiscard]] bool contains(std::string_view name) const noexcept;
    [[nodiscard]] Tensor& at(std::string_view name);
    [[nodiscard]] const Tensor& at(std::string_view name) const;
    [[nodiscard]] Entry& entry(std::size_t i) { return entries_.at(i); }
    [[nodiscard]] const Entry& entry(std::size_t i) const { return entries_.at(i); }

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] std::size_t total_count() const noexcept;

    [[nodiscard]] auto begin() noexcept { return entries_.begin(); }
    [[nodiscard]] auto end() noexcept { return entries_.end(); }
    [[nodiscard]] auto begin() const noexcept { return entries_.begin(); }
    [[nodiscard]] auto end() const noexcept { return entries_.end(); }

    [[nodiscard]] std::vector<double> flatten() const;
    void assign_flat(std::span<const double> flat);

    [[nodiscard]] ParamArrays values() const;
    [[nodiscard]] ParamArrays grads() const;
    void assign(const ParamArrays& arrays);
    [[nodiscard]] ParamArrays zeros_like() const;

    /// True when names and shapes agree entry by entry.
    [[nodiscard]] bool same_layout(const ParameterSet& other) const noexcept;

    void zero_grad();

    /// FNV-1a over the raw bytes of every value, in entry order.
    [[nodiscard]] std::uint64_t checksum() const noexcept;
    [[nodiscard]] static std::uint64_t checksum(const Tensor& t) noexcept;

private:
    std::deque<Entry> entries_;
};

}  // namespace faircl
