#include "vsanet/csa.hpp"

#include <stdexcept>
#include <string>

namespace vsanet {

template <typename Real>
void CsaParams<Real>::validate() const {
  if (!weight.defined() || weight.rank() != 4 || weight.dim(0) != 1 || weight.dim(1) != 2) {
    throw std::invalid_argument("csa: kernel must be [1, 2, kF, kT]");
  }
  if (kernel_f() % 2 == 0) {
    throw std::invalid_argument("csa: kF must be odd, got " + std::to_string(kernel_f()));
  }
  if (kernel_t() < 1) throw std::invalid_argument("csa: kT must be >= 1");
  if (!bias.defined() || bias.size() != 1) throw std::invalid_argument("csa: bias must be [1]");
}

template <typename Real>
CsaParams<Real> make_csa(std::size_t kernel_f, std::size_t kernel_t) {
  CsaParams<Real> p{nn::Tensor<Real>(nn::Shape{1, 2, kernel_f, kernel_t}), nn::Tensor<Real>(nn::Shape{1})};
  p.validate();
  return p;
}

template <typename Real>
nn::Tensor<Real> spatial_attention_map(const nn::Tensor<Real>& u, const CsaParams<Real>& p) {
  p.validate();
  const auto pooled = nn::channel_pool(u);
  const nn::Conv2dParams<Real> conv{p.weight, p.bias};
  return nn::sigmoid(nn::conv2d_causal(pooled, conv, nn::Conv2dOptions{1, (p.kernel_f() - 1) / 2}));
}

template <typename Real>
nn::Tensor<Real> csa_forward(const nn::Tensor<Real>& u, const CsaParams<Real>& p) {
  return nn::mul_broadcast_channels(u, spatial_attention_map(u, p));
}

template struct CsaParams<float>;
template struct CsaParams<double>;
template CsaParams<float> make_csa<float>(std::size_t, std::size_t);
template CsaParams<double> make_csa<double>(std::size_t, std::size_t);
template nn::Tensor<float> spatial_attention_map(const nn::Tensor<float>&, const CsaParams<float>&);
template nn::Tensor<double> spatial_attention_map(const nn::Tensor<double>&, const CsaParams<double>&);
template nn::Tensor<float> csa_forward(const nn::Tensor<float>&, const CsaParams<float>&);
template nn::Tensor<double> csa_forward(const nn::Tensor<double>&, const CsaParams<double>&);

}  // namespace vsanet
