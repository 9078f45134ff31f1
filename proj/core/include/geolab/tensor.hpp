#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "geolab/error.hpp"
#include "geolab/rng.hpp"

namespace geolab {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    Reshape,
    Transpose,
    Concat,
    Slice,
    Sum,
    Mean,
    Softmax,
    LayerNorm,
    Relu,
    Gelu,
    Exp,
    Log,
    Sqrt,
    Abs,
    Clamp,
    Arccos,
    Huber,
    Cross3,
    L2Normalize,
    SvdOrthogonalize3,
    Attention,
};

const char* op_name(OpKind kind);

// Per-op parameters. A plain bag of fields; each kind reads the ones it needs.
struct OpAttrs {
    Shape shape;                             // Reshape
    std::vector<int> perm;                   // Transpose
    int axis = -1;                           // Concat; Sum/Mean (-1 = reduce all)
    std::vector<std::int64_t> offsets;       // Slice
    std::vector<std::int64_t> extents;       // Slice
    double lo = 0.0;                         // Clamp
    double hi = 0.0;                         // Clamp
    double delta = 1.0;                      // Huber knee
    double eps = 1e-5;                       // LayerNorm
    int heads = 1;                           // Attention
    double scale = 1.0;                      // Attention score scale
    std::vector<std::int64_t> block_starts;  // Attention: key blocks, nb+1 entries
    std::vector<std::uint8_t> allowed;       // Attention: Tq x nb visibility
};

class Graph;

class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    Shape shape;
    std::vector<double> data;  // dense, row-major, f64
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation

    // Differentiation-graph linkage.
    std::vector<std::shared_ptr<Tensor>> parents;
    std::function<void(const Tensor&)> backward_fn;
    OpKind op = OpKind::Leaf;
    std::int64_t node_id = -1;
    Graph* graph = nullptr;

    Tensor(std::vector<double> d, Shape s, bool req_grad);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }

    // Value of a one-element tensor.
    double value() const;

    void ensure_grad();
    void zero_grad();
    void accumulate_grad(const std::vector<double>& g);
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_leaf(std::vector<double> data, Shape shape, bool requires_grad);
TensorPtr constant(std::vector<double> data, Shape shape);
TensorPtr scalar(double v);
TensorPtr full(const Shape& shape, double v);

// One training step's differentiation graph: a topologically ordered tape of
// op records plus the seed that any stochastic consumer of the graph splits
// from (counter-based, per node).
class Graph {
public:
    struct NodeRecord {
        OpKind kind;
        OpAttrs attrs;
        std::vector<std::int64_t> inputs;
        std::int64_t output;
    };

    explicit Graph(std::uint64_t seed) : seed_(seed) {}
    ~Graph();

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    std::uint64_t seed() const { return seed_; }
    Rng node_rng(std::int64_t node_id) const {
        return Rng(splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(node_id) + 1)));
    }
    Rng draw_rng(std::string_view tag) const { return Rng(splitmix64(seed_ ^ hash_tag(tag))); }

    std::int64_t register_leaf(const TensorPtr& t);
    std::int64_t register_node(OpKind kind, OpAttrs attrs, const std::vector<TensorPtr>& inputs,
                               const TensorPtr& out);

    const std::vector<NodeRecord>& nodes() const { return records_; }
    const TensorPtr& tensor_at(std::int64_t id) const { return tensors_.at(static_cast<std::size_t>(id)); }
    std::int64_t size() const { return static_cast<std::int64_t>(tensors_.size()); }

    // Re-executes every recorded op from the saved leaf values and returns the
    // recomputed buffer per node id. Bit-identical to the live forward pass.
    std::vector<std::vector<double>> replay() const;

    bool backward_done = false;

private:
    std::uint64_t seed_;
    std::vector<NodeRecord> records_;
    std::vector<TensorPtr> tensors_;
};

// RAII scope installing a graph as the thread-local recording target.
class GraphScope {
public:
    explicit GraphScope(Graph& g);
    ~GraphScope();
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph* prev_;
};

Graph* current_graph();

// Reverse-mode sweep from a scalar loss. Populates .grad on every
// requires_grad tensor reachable through the parents links. A second call on
// the same graph without rebuilding it is an error, as is a loss that is not
// scalar or is detached from any graph.
void backward(const TensorPtr& loss);

}  // namespace geolab
