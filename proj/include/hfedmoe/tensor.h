// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HFEDMOE_TENSOR_H_
#define HFEDMOE_TENSOR_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hfedmoe {

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of doubles. Every dimension is positive and
// data().size() == product of the shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  // 2-D convenience: rows x cols from a nested initializer.
  static Tensor FromRows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Leading dimension and product of the remaining ones.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  bool AllFinite() const;
  bool SameShape(const Tensor& other) const { return shape_ == other.shape_; }

  // Same data, new shape of equal element count.
  Tensor Reshaped(Shape shape) const;

  void Fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string ShapeToString(const Shape& shape);
std::size_t NumElements(const Shape& shape);

}  // namespace hfedmoe

#endif  // HFEDMOE_TENSOR_H_
