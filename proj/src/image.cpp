#include "histoscore/image.hpp"

#include <cmath>

namespace histoscore {

void IntensityFractions::validate() const {
    for (double v : {wsn, msn, ssn, unstained}) {
        if (!(v >= 0.0 && v <= 100.0))
            throw std::invalid_argument("intensity fraction outside [0,100]");
    }
    double sum = wsn + msn + ssn + unstained;
    if (std::abs(sum - 100.0) > 1e-9)
        throw std::invalid_argument("intensity fractions must sum to 100");
}

HScore h_score(const IntensityFractions& fractions) {
    fractions.validate();
    return HScore{1.0 * fractions.wsn + 2.0 * fractions.msn + 3.0 * fractions.ssn};
}

}  // namespace histoscore
