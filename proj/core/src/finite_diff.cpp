#include "geolab/finite_diff.hpp"

#include <cmath>

namespace geolab {

double finite_diff_check(const TensorFn& f, const TensorPtr& x, double h) {
    // Analytic gradient on a private graph.
    auto leaf = make_leaf(x->data, x->shape, true);
    std::vector<double> analytic;
    {
        Graph g(0);
        GraphScope scope(g);
        auto y = f(leaf);
        if (y->numel() != 1) {
            throw Error("finite_diff_check: f must be scalar-valued, got shape " +
                        shape_str(y->shape));
        }
        backward(y);
        leaf->ensure_grad();
        analytic = leaf->grad;
    }

    // Central differences, evaluated without any recording graph.
    double worst = 0.0;
    std::vector<double> base = x->data;
    for (std::size_t i = 0; i < base.size(); ++i) {
        double saved = base[i];
        base[i] = saved + h;
        double fp = f(constant(base, x->shape))->value();
        base[i] = saved - h;
        double fm = f(constant(base, x->shape))->value();
        base[i] = saved;
        double numeric = (fp - fm) / (2.0 * h);
        double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace geolab
