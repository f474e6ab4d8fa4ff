#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "kpc/tensor.hpp"

namespace kpc {

class Graph;

/// Handle to a value recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();

  bool valid() const { return graph != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  // Gradient accumulated by the last backward pass (zeros if none reached it).
  std::span<const double> grad() const;
};

/// Reverse-mode tape over whole tensors.
///
/// Nodes are appended in execution order, so walking them backwards is a
/// reverse-topological visit. A graph supports exactly one backward pass;
/// build a new graph for the next forward pass.
///
/// Parameter leaves reference caller-owned tensors and accumulate straight
/// into their grad buffers, so several graphs can add into the same
/// parameters (minibatch accumulation).
class Graph {
 public:
  // Receives the node's output gradient; must add into input gradients via
  // grad_buffer().
  using BackwardFn = std::function<void(Graph&, std::span<const double> out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is tracked inside the graph (read it with Var::grad()).
  Var input(Tensor value);
  // Leaf bound to an external tensor; backward adds into param.grad().
  Var parameter(Tensor& param);

  // Extension point for operations defined outside numcore.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::span<const double> grad(Var v);
  std::span<double> grad_buffer(Var v);

  void backward(Var loss);
  bool backward_done() const { return backward_done_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor* param = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

struct Conv2dOptions {
  std::size_t groups = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

// Padding that keeps spatial size for an odd kernel.
inline std::size_t same_padding(std::size_t kernel, std::size_t dilation) { return dilation * (kernel - 1) / 2; }

/// Grouped, dilated 2-D cross-correlation with zero padding.
/// input [C_in x H x W], weight [C_out x C_in/groups x k x k], bias [C_out].
Var conv2d(Var input, Var weight, Var bias, Conv2dOptions opts);

/// Adaptive average pooling to L x L with bins [floor(i*H/L), ceil((i+1)*H/L)).
Var adaptive_avg_pool(Var input, std::size_t out_len);

/// weight * flatten(input) + bias; weight [M x D], bias [M].
Var linear(Var input, Var weight, Var bias);

Var relu(Var input);
Var add(Var a, Var b);
Var scale(Var input, double factor);
// Flattened, order-preserving concatenation.
Var concat(const std::vector<Var>& parts);
Var reshape(Var input, Shape shape);
Var flatten(Var input);
// Sum of all elements as a scalar.
Var sum(Var input);
// Sum over the leading axis: [K x H x W] -> [H x W].
Var sum_leading(Var input);
// Elements at the given flat indices; gradient accumulates on duplicates.
Var select(Var input, std::vector<std::size_t> flat_indices);

struct GridPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

/// Channel fibers of a [C x H x W] input at each point: output [n x C].
Var gather_at(Var input, const std::vector<GridPoint>& points);

struct ArgMax {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

// Ties go to the smallest row-major index.
ArgMax argmax2d(std::span<const double> map, std::size_t height, std::size_t width);
ArgMax argmax2d(const Tensor& map);

}  // namespace kpc
