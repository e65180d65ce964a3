#include "duelvae/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace duelvae {

double LrSchedule::operator()(int64_t t) const {
  if (t < 0) throw std::invalid_argument("lr schedule: negative step");
  const double td = static_cast<double>(t);
  return base * std::pow(decay, td / decay_steps) * (1.0 - std::pow(decay, td / warmup_steps)) +
         floor;
}

}  // namespace duelvae
