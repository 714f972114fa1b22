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

#include "hfedmoe/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "hfedmoe/errors.h"

namespace hfedmoe {

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void CheckShape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           ShapeToString(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  CheckShape(shape_);
  data_.assign(NumElements(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  CheckShape(shape_);
  if (data_.size() != NumElements(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + ShapeToString(shape_));
  }
}

Tensor Tensor::FromRows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows[0].empty()) {
    throw DimensionError("FromRows needs a non-empty matrix");
  }
  const std::size_t c = rows[0].size();
  std::vector<double> flat;
  flat.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw DimensionError("ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), c}, std::move(flat));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         ShapeToString(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + ShapeToString(shape_) + " to " +
                         ShapeToString(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::Fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace hfedmoe
