#pragma once

// Binning of a measurement grid and binned photon-count data.

#include <cstdint>
#include <string>
#include <vector>

#include "irnm/core.hpp"

namespace irnm {

// Partition of the grid points into J disjoint bins M_j of positive measure.
// S_J g = (integral of g over M_j)_j, S_J^* v = sum_j v_j/|M_j| 1_{M_j}.
class Binning {
public:
    Binning(GridPtr grid, std::vector<Index> bin_of_point, Index bins)
        : grid_(std::move(grid)), bin_of_(std::move(bin_of_point)), measures_(VectorXd::Zero(bins))
    {
        if (!grid_)
            throw InvalidInputError("binning without grid");
        if (static_cast<Index>(bin_of_.size()) != grid_->size())
            throw AlignmentError("binning: assignment length differs from grid size");
        if (bins < 1)
            throw InvalidInputError("binning needs at least one bin");
        for (size_t i = 0; i < bin_of_.size(); ++i) {
            const Index b = bin_of_[i];
            if (b < 0 || b >= bins)
                throw InvalidInputError("binning: bin index out of range");
            measures_[b] += grid_->weights()[static_cast<Index>(i)];
        }
        if (!(measures_.array() > 0.0).all())
            throw InvalidInputError("binning: every bin needs positive measure");
    }

    // One bin per grid point.
    static Binning identity(const GridPtr& grid)
    {
        std::vector<Index> a(static_cast<size_t>(grid->size()));
        for (Index i = 0; i < grid->size(); ++i) a[static_cast<size_t>(i)] = i;
        return Binning(grid, std::move(a), grid->size());
    }

    // `bins` contiguous blocks in point order. Block sizes differ by at most one.
    static Binning blocks(const GridPtr& grid, Index bins)
    {
        const Index n = grid->size();
        if (bins < 1 || bins > n)
            throw InvalidInputError("blocks: need 1 <= bins <= grid size");
        std::vector<Index> a(static_cast<size_t>(n));
        for (Index i = 0; i < n; ++i) a[static_cast<size_t>(i)] = (i * bins) / n;
        return Binning(grid, std::move(a), bins);
    }

    Index bins() const { return measures_.size(); }
    const VectorXd& measures() const { return measures_; }
    const GridPtr& grid_ptr() const { return grid_; }
    const Grid& grid() const { return *grid_; }
    Index bin_of(Index point) const { return bin_of_[static_cast<size_t>(point)]; }

    VectorXd apply(const Signal& g) const
    {
        require_on(g, *grid_, "bin_apply");
        VectorXd out = VectorXd::Zero(bins());
        const VectorXd& w = grid_->weights();
        for (Index i = 0; i < g.size(); ++i) out[bin_of(i)] += w[i] * g[i];
        return out;
    }

    Signal adjoint(const VectorXd& v) const
    {
        if (v.size() != bins())
            throw AlignmentError("bin_adjoint: vector length differs from bin count");
        VectorXd out(grid_->size());
        for (Index i = 0; i < out.size(); ++i) out[i] = v[bin_of(i)] / measures_[bin_of(i)];
        return Signal(grid_, std::move(out));
    }

    // P_J = S_J^* S_J, the L2-orthogonal projection onto bin-wise constants.
    Signal project(const Signal& g) const { return adjoint(apply(g)); }

    // <a, b> = sum_j |M_j|^{-1} a_j b_j, the pairing that makes S_J^* adjoint to S_J.
    double bin_inner(const VectorXd& a, const VectorXd& b) const
    {
        return (a.array() * b.array() / measures_.array()).sum();
    }

private:
    GridPtr grid_;
    std::vector<Index> bin_of_;
    VectorXd measures_;
};

// Photon counts per bin after exposure time t. The sampling seed is kept for
// reproducibility (0 when the data did not come from the sampler).
struct CountData {
    std::vector<std::int64_t> counts;
    double t = 1.0;
    Binning binning;
    std::uint64_t seed = 0;

    CountData(std::vector<std::int64_t> c, double exposure, Binning b, std::uint64_t s = 0)
        : counts(std::move(c)), t(exposure), binning(std::move(b)), seed(s)
    {
        if (static_cast<Index>(counts.size()) != binning.bins())
            throw AlignmentError("count vector length differs from bin count");
        if (!(t > 0.0) || !std::isfinite(t))
            throw InvalidInputError("exposure time must be positive");
        for (auto c_j : counts)
            if (c_j < 0)
                throw InvalidInputError("negative photon count");
    }

    Index bins() const { return binning.bins(); }
    const VectorXd& bin_measures() const { return binning.measures(); }

    // (1/t) * counts, i.e. S_J G_t.
    VectorXd scaled() const
    {
        VectorXd v(bins());
        for (Index j = 0; j < bins(); ++j) v[j] = static_cast<double>(counts[static_cast<size_t>(j)]) / t;
        return v;
    }
};

// Piecewise-constant photon density S_J^*((1/t) counts) on the measurement grid.
inline Signal observed_density(const CountData& data) { return data.binning.adjoint(data.scaled()); }

}  // namespace irnm
