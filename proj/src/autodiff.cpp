#include "metaprompt/autodiff.hpp"

#include <algorithm>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "metaprompt/ops.hpp"

namespace metaprompt::ad {

bool GradResult::warning() const {
  return std::any_of(unreachable.begin(), unreachable.end(),
                     [](bool u) { return u; });
}

namespace {

using Slot = std::optional<Tensor>;

void accumulate(Slot& slot, const Tensor& g) {
  if (slot) {
    slot = add(*slot, g);
  } else {
    slot = g;
  }
}

std::vector<Node*> reachable_nodes(const Tensor& loss) {
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<Node*> stack{loss.grad_fn().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Node* node = stack.back();
    stack.pop_back();
    order.push_back(node);
    for (const auto& in : node->inputs()) {
      Node* parent = in.grad_fn().get();
      if (parent != nullptr && seen.insert(parent).second) {
        stack.push_back(parent);
      }
    }
  }
  // Creation order is a topological order of the graph.
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) {
    return a->sequence() > b->sequence();
  });
  return order;
}

}  // namespace

GradResult backward(const Tensor& loss, std::span<const Tensor> wrt,
                    bool retain_for_higher_order) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        loss.shape().str());
  }

  std::unordered_map<const detail::TensorImpl*, Slot> leaf_grads;
  std::unordered_map<const Node*, Slot> node_grads;
  std::unordered_set<const Node*> keep;
  for (const auto& t : wrt) {
    if (t.is_leaf()) {
      leaf_grads.emplace(t.impl(), std::nullopt);
    } else {
      keep.insert(t.grad_fn().get());
    }
  }

  if (loss.grad_fn() != nullptr) {
    std::optional<NoGradGuard> no_grad;
    if (!retain_for_higher_order) no_grad.emplace();

    // Only nodes on a path from the loss to a target matter. Ascending
    // creation order visits inputs before the nodes that consume them.
    const std::vector<Node*> order = reachable_nodes(loss);
    std::unordered_set<const Node*> upstream;  // some target lies above
    std::unordered_set<const Node*> relevant;  // target, or upstream of one
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Node* node = *it;
      for (const auto& in : node->inputs()) {
        if (!in.requires_grad()) continue;
        const Node* parent = in.grad_fn().get();
        if (parent != nullptr ? relevant.contains(parent)
                              : leaf_grads.contains(in.impl())) {
          upstream.insert(node);
          break;
        }
      }
      if (upstream.contains(node) || keep.contains(node)) relevant.insert(node);
    }

    node_grads[loss.grad_fn().get()] = Tensor::scalar(1.0);
    for (Node* node : order) {
      if (!upstream.contains(node)) continue;
      auto it = node_grads.find(node);
      if (it == node_grads.end() || !it->second) continue;
      const Tensor grad_out = *it->second;
      if (!keep.contains(node)) node_grads.erase(it);

      const auto input_grads = node->backward(grad_out);
      const auto& inputs = node->inputs();
      for (std::size_t i = 0; i < inputs.size() && i < input_grads.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        if (const Node* parent = inputs[i].grad_fn().get(); parent != nullptr) {
          if (relevant.contains(parent)) accumulate(node_grads[parent], input_grads[i]);
        } else if (auto leaf = leaf_grads.find(inputs[i].impl());
                   leaf != leaf_grads.end()) {
          accumulate(leaf->second, input_grads[i]);
        }
      }
    }
  }

  GradResult result;
  result.grads.reserve(wrt.size());
  result.unreachable.reserve(wrt.size());
  const std::uint8_t flag =
      retain_for_higher_order ? detail::kHigherOrder : detail::kDetachedGradient;
  for (const auto& target : wrt) {
    Slot g;
    if (target.is_leaf()) {
      g = leaf_grads.at(target.impl());
    } else if (auto it = node_grads.find(target.grad_fn().get());
               it != node_grads.end()) {
      g = it->second;
    }
    result.unreachable.push_back(!g.has_value());
    Tensor out = g ? *g : Tensor::zeros(target.rows(), target.cols());
    out.impl()->flags |= flag;
    result.grads.push_back(std::move(out));
  }
  return result;
}

Tensor grad_of_grad(const Tensor& meta_loss, const Tensor& wrt) {
  if (meta_loss.depends_on_detached_gradient()) {
    throw HigherOrderGraphAbsent(
        "higher-order graph absent: the meta-objective depends on a gradient "
        "computed without retain_for_higher_order");
  }
  if (!meta_loss.depends_on_retained_gradient()) {
    throw HigherOrderGraphAbsent(
        "higher-order graph absent: the meta-objective was not built through "
        "a retained backward pass");
  }
  return backward(meta_loss, std::span<const Tensor>(&wrt, 1), false).grads[0];
}

}  // namespace metaprompt::ad
