#include "teb/models.hpp"

namespace teb {

template class TebModel<float>;
template class JointModel<float>;
template class TebCModel<float>;
template class TebModel<double>;
template class JointModel<double>;
template class TebCModel<double>;

}  // namespace teb
