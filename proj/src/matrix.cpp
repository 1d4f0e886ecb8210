#include "kdpdfl/matrix.hpp"

#include <algorithm>
#include <stdexcept>

namespace kdpdfl {

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), source.cols);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= source.rows) {
            throw std::out_of_range("gather_rows: row index out of range");
        }
        auto src = source.row(indices[k]);
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
}

}  // namespace kdpdfl
