#include "earfa/tensor.hpp"

#include <cmath>

namespace earfa {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_->begin(), data_->end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace earfa
