/*
 * Copyright 2026 The paenet-cpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "paenet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace paenet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

static void validate_shape(const Shape& shape) {
  require(!shape.empty() && shape.size() <= kMaxRank,
          "tensor rank must be in 1.." + std::to_string(kMaxRank) + ", got " + to_string(shape));
  for (auto e : shape) require(e >= 1, "tensor extents must be >= 1, got " + to_string(shape));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  validate_shape(shape_);
  require(data_.size() == numel(shape_), "data length " + std::to_string(data_.size()) +
                                             " does not match shape " + to_string(shape_));
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  require(index.size() == shape_.size(), "index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    require(i < shape_[axis], "index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <typename T>
Tensor<T> Tensor<T>::uninitialized(Shape shape) {
  validate_shape(shape);
  Tensor out;
  out.data_.resize(numel(shape));
  out.shape_ = std::move(shape);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(*this).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  validate_shape(shape);
  require(numel(shape) == data_.size(), "reshape from " + to_string(shape_) + " to " + to_string(shape) +
                                            " changes the element count");
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data_);
  return out;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  for (auto v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<std::uint8_t>;
template void check_finite(const Tensor<float>&, const char*);
template void check_finite(const Tensor<double>&, const char*);

}  // namespace paenet
