#include "geolab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace geolab {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::MatMul: return "matmul";
        case OpKind::Reshape: return "reshape";
        case OpKind::Transpose: return "transpose";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layernorm";
        case OpKind::Relu: return "relu";
        case OpKind::Gelu: return "gelu";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Abs: return "abs";
        case OpKind::Clamp: return "clamp";
        case OpKind::Arccos: return "arccos";
        case OpKind::Huber: return "huber";
        case OpKind::Cross3: return "cross3";
        case OpKind::L2Normalize: return "l2normalize";
        case OpKind::SvdOrthogonalize3: return "svd_orthogonalize3";
        case OpKind::Attention: return "attention";
    }
    return "?";
}

Tensor::Tensor(std::vector<double> d, Shape s, bool req_grad)
    : shape(std::move(s)), data(std::move(d)), requires_grad(req_grad) {
    if (static_cast<std::int64_t>(data.size()) != geolab::numel(shape)) {
        throw Error("tensor: data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
    }
}

double Tensor::value() const {
    if (data.size() != 1) {
        throw Error("tensor: value() requires a one-element tensor, got shape " + shape_str(shape));
    }
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (!requires_grad) return;
    if (g.size() != data.size()) {
        throw Error("tensor: gradient size mismatch on " + std::string(op_name(op)));
    }
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

TensorPtr make_leaf(std::vector<double> data, Shape shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(data), std::move(shape), requires_grad);
}

TensorPtr constant(std::vector<double> data, Shape shape) {
    return make_leaf(std::move(data), std::move(shape), false);
}

TensorPtr scalar(double v) { return constant({v}, {1}); }

TensorPtr full(const Shape& shape, double v) {
    return constant(std::vector<double>(static_cast<std::size_t>(numel(shape)), v), shape);
}

namespace {
thread_local Graph* t_current_graph = nullptr;
}

GraphScope::GraphScope(Graph& g) : prev_(t_current_graph) { t_current_graph = &g; }
GraphScope::~GraphScope() { t_current_graph = prev_; }

Graph* current_graph() { return t_current_graph; }

Graph::~Graph() {
    for (auto& t : tensors_) {
        if (t && t->graph == this) {
            t->graph = nullptr;
            t->node_id = -1;
        }
    }
}

std::int64_t Graph::register_leaf(const TensorPtr& t) {
    if (t->graph == this) return t->node_id;
    if (t->graph != nullptr) {
        throw Error("graph: tensor already belongs to another differentiation graph");
    }
    std::int64_t id = static_cast<std::int64_t>(tensors_.size());
    tensors_.push_back(t);
    records_.push_back(NodeRecord{OpKind::Leaf, OpAttrs{}, {}, id});
    t->graph = this;
    t->node_id = id;
    return id;
}

std::int64_t Graph::register_node(OpKind kind, OpAttrs attrs, const std::vector<TensorPtr>& inputs,
                                  const TensorPtr& out) {
    NodeRecord rec;
    rec.kind = kind;
    rec.attrs = std::move(attrs);
    rec.inputs.reserve(inputs.size());
    for (const auto& in : inputs) rec.inputs.push_back(register_leaf(in));
    std::int64_t id = static_cast<std::int64_t>(tensors_.size());
    rec.output = id;
    tensors_.push_back(out);
    out->graph = this;
    out->node_id = id;
    records_.push_back(std::move(rec));
    return id;
}

void backward(const TensorPtr& loss) {
    if (!loss) throw Error("backward: null loss");
    if (loss->numel() != 1) {
        throw Error("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad || loss->graph == nullptr) {
        throw Error("backward: loss is detached from any differentiation graph");
    }
    Graph* g = loss->graph;
    if (g->backward_done) {
        throw Error("backward: repeated call on the same graph without reset");
    }
    g->backward_done = true;

    // Depth-first topological order over the parents links.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (t->backward_fn && !t->grad.empty()) t->backward_fn(*t);
    }
}

}  // namespace geolab
