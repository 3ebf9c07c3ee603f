#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zootune/errors.hpp"
#include "zootune/kernels.hpp"
#include "zootune/mac_counter.hpp"
#include "zootune/tensor.hpp"

// Define-by-run reverse-mode tape. Ops execute eagerly and record a backward
// closure; backward() walks the tape once in reverse creation order, so
// gradient accumulation order is deterministic. A graph is single-use:
// calling backward twice throws.

namespace zootune {

struct Value {
  int id = -1;
};

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void set_counter(MacCounter* counter) { counter_ = counter; }
  void set_layer(std::string name) { layer_ = std::move(name); }

  Value leaf(Tensor<T> t, bool requires_grad) {
    Node n;
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Value constant(Tensor<T> t) { return leaf(std::move(t), false); }

  const Tensor<T>& value(Value v) const { return at(v).value; }

  bool requires_grad(Value v) const { return at(v).requires_grad; }

  std::size_t node_count() const { return nodes_.size(); }

  // Gradient of the last backward() target w.r.t. v. Nodes the target does
  // not depend on get a zero tensor.
  Tensor<T> grad(Value v) const {
    const Node& n = at(v);
    if (!n.requires_grad) {
      throw StateError("gradient requested for a value that does not require it");
    }
    if (!consumed_) throw StateError("backward has not run on this graph");
    if (!n.has_grad) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Value loss) {
    if (consumed_) throw StateError("backward already ran on this graph");
    const Node& ln = at(loss);
    if (ln.value.size() != 1) {
      throw ValueError("backward target must be scalar, got shape " +
                       shape_str(ln.value.shape()));
    }
    if (!ln.requires_grad) {
      throw StateError("backward target does not depend on any trainable value");
    }
    consumed_ = true;
    accumulate(loss.id, Tensor<T>::full(ln.value.shape(), T(1)));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
  }

  bool backward_done() const { return consumed_; }

  Value conv2d(Value x, Value w, std::optional<Value> bias, int stride, int pad,
               MacBucket bucket = MacBucket::base) {
    const Tensor<T>& xv = at(x).value;
    const Tensor<T>& wv = at(w).value;
    const Tensor<T>* bv = bias ? &at(*bias).value : nullptr;
    Node n;
    n.value = detail::conv2d_fwd(xv, wv, bv, stride, pad, scope(bucket));
    n.requires_grad = any_requires({x, w}) || (bias && at(*bias).requires_grad);
    if (n.requires_grad) {
      int xid = x.id, wid = w.id, bid = bias ? bias->id : -1;
      n.backward = [xid, wid, bid, stride, pad](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& xt = g.nodes_[static_cast<std::size_t>(xid)].value;
        const Tensor<T>& wt = g.nodes_[static_cast<std::size_t>(wid)].value;
        if (g.needs(xid)) {
          g.accumulate(xid, detail::conv2d_grad_input(gy, wt, xt.shape(), stride, pad));
        }
        if (g.needs(wid)) {
          g.accumulate(wid, detail::conv2d_grad_weight(gy, xt, wt.shape(), stride, pad));
        }
        if (bid >= 0 && g.needs(bid)) {
          g.accumulate(bid, detail::conv2d_grad_bias(gy));
        }
      };
    }
    return push(std::move(n));
  }

  Value batch_norm(Value x, Value gamma, Value beta, Tensor<T>* running_mean,
                   Tensor<T>* running_var, bool train, double momentum, double eps) {
    const Tensor<T>& xv = at(x).value;
    Node n;
    Tensor<T> x_hat;
    std::vector<double> inv_std;
    n.value = detail::batch_norm_fwd(xv, at(gamma).value, at(beta).value,
                                     running_mean, running_var, train, momentum,
                                     eps, &x_hat, &inv_std);
    n.requires_grad = any_requires({x, gamma, beta});
    if (n.requires_grad) {
      int xid = x.id, gid = gamma.id, bid = beta.id;
      n.backward = [xid, gid, bid, train, x_hat = std::move(x_hat),
                    inv_std = std::move(inv_std)](Graph& g, const Tensor<T>& gy) {
        Tensor<T> gx, ggamma, gbeta;
        detail::batch_norm_bwd(gy, x_hat, inv_std,
                               g.nodes_[static_cast<std::size_t>(gid)].value, train,
                               &gx, &ggamma, &gbeta);
        if (g.needs(xid)) g.accumulate(xid, std::move(gx));
        if (g.needs(gid)) g.accumulate(gid, std::move(ggamma));
        if (g.needs(bid)) g.accumulate(bid, std::move(gbeta));
      };
    }
    return push(std::move(n));
  }

  Value relu(Value x) {
    Node n;
    n.value = detail::relu_fwd(at(x).value);
    n.requires_grad = at(x).requires_grad;
    if (n.requires_grad) {
      int xid = x.id;
      n.backward = [xid](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& xt = g.nodes_[static_cast<std::size_t>(xid)].value;
        Tensor<T> gx(xt.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] = xt[i] > T(0) ? gy[i] : T(0);
        }
        g.accumulate(xid, std::move(gx));
      };
    }
    return push(std::move(n));
  }

  Value sigmoid(Value x) {
    Node n;
    n.value = detail::sigmoid_fwd(at(x).value);
    n.requires_grad = at(x).requires_grad;
    int out_id = static_cast<int>(nodes_.size());
    if (n.requires_grad) {
      int xid = x.id;
      n.backward = [xid, out_id](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& s = g.nodes_[static_cast<std::size_t>(out_id)].value;
        Tensor<T> gx(s.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] = gy[i] * s[i] * (T(1) - s[i]);
        }
        g.accumulate(xid, std::move(gx));
      };
    }
    return push(std::move(n));
  }

  Value gap(Value x, MacBucket bucket = MacBucket::base) {
    Node n;
    n.value = detail::gap_fwd(at(x).value, scope(bucket));
    n.requires_grad = at(x).requires_grad;
    if (n.requires_grad) {
      int xid = x.id;
      std::vector<int> xshape = at(x).value.shape();
      n.backward = [xid, xshape](Graph& g, const Tensor<T>& gy) {
        g.accumulate(xid, detail::gap_bwd(gy, xshape));
      };
    }
    return push(std::move(n));
  }

  Value affine(Value x, Value w, Value b, MacBucket bucket = MacBucket::base) {
    Node n;
    n.value = detail::affine_fwd(at(x).value, at(w).value, at(b).value, scope(bucket));
    n.requires_grad = any_requires({x, w, b});
    if (n.requires_grad) {
      int xid = x.id, wid = w.id, bid = b.id;
      n.backward = [xid, wid, bid](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& xt = g.nodes_[static_cast<std::size_t>(xid)].value;
        const Tensor<T>& wt = g.nodes_[static_cast<std::size_t>(wid)].value;
        if (g.needs(xid)) g.accumulate(xid, detail::matmul_nn(gy, wt));
        if (g.needs(wid)) g.accumulate(wid, detail::matmul_tn(gy, xt));
        if (g.needs(bid)) {
          Tensor<T> gb({gy.dim(1)});
          for (int i = 0; i < gy.dim(0); ++i)
            for (int o = 0; o < gy.dim(1); ++o) gb[static_cast<std::size_t>(o)] += gy(i, o);
          g.accumulate(bid, std::move(gb));
        }
      };
    }
    return push(std::move(n));
  }

  Value matmul(Value a, Value b, MacBucket bucket) {
    Node n;
    n.value = detail::matmul_nn(at(a).value, at(b).value, scope(bucket));
    n.requires_grad = any_requires({a, b});
    if (n.requires_grad) {
      int aid = a.id, bid = b.id;
      n.backward = [aid, bid](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& at_ = g.nodes_[static_cast<std::size_t>(aid)].value;
        const Tensor<T>& bt = g.nodes_[static_cast<std::size_t>(bid)].value;
        if (g.needs(aid)) g.accumulate(aid, detail::matmul_nt(gy, bt));
        if (g.needs(bid)) g.accumulate(bid, detail::matmul_tn(at_, gy));
      };
    }
    return push(std::move(n));
  }

  Value reshape(Value x, std::vector<int> shape) {
    Node n;
    n.value = at(x).value.reshaped(shape);
    n.requires_grad = at(x).requires_grad;
    if (n.requires_grad) {
      int xid = x.id;
      std::vector<int> orig = at(x).value.shape();
      n.backward = [xid, orig](Graph& g, const Tensor<T>& gy) {
        g.accumulate(xid, gy.reshaped(orig));
      };
    }
    return push(std::move(n));
  }

  Value add(Value a, Value b) {
    const Tensor<T>& av = at(a).value;
    const Tensor<T>& bv = at(b).value;
    if (!av.same_shape(bv)) {
      throw ShapeError("add mismatch: " + shape_str(av.shape()) + " vs " +
                       shape_str(bv.shape()));
    }
    Node n;
    n.value = Tensor<T>(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] + bv[i];
    n.requires_grad = any_requires({a, b});
    if (n.requires_grad) {
      int aid = a.id, bid = b.id;
      n.backward = [aid, bid](Graph& g, const Tensor<T>& gy) {
        if (g.needs(aid)) g.accumulate(aid, gy);
        if (g.needs(bid)) g.accumulate(bid, gy);
      };
    }
    return push(std::move(n));
  }

  // out = s * x where s is a scalar node (shape with one element).
  Value scale(Value s, Value x, MacBucket bucket = MacBucket::agg) {
    const Tensor<T>& sv = at(s).value;
    const Tensor<T>& xv = at(x).value;
    if (sv.size() != 1) {
      throw ShapeError("scale factor must be scalar, got " + shape_str(sv.shape()));
    }
    Node n;
    n.value = detail::scale_tensor(sv[0], xv, scope(bucket));
    n.requires_grad = any_requires({s, x});
    if (n.requires_grad) {
      int sid = s.id, xid = x.id;
      n.backward = [sid, xid](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& st = g.nodes_[static_cast<std::size_t>(sid)].value;
        const Tensor<T>& xt = g.nodes_[static_cast<std::size_t>(xid)].value;
        if (g.needs(sid)) {
          T acc = T(0);
          for (std::size_t i = 0; i < xt.size(); ++i) acc += gy[i] * xt[i];
          Tensor<T> gs(st.shape());
          gs[0] = acc;
          g.accumulate(sid, std::move(gs));
        }
        if (g.needs(xid)) {
          Tensor<T> gx(xt.shape());
          for (std::size_t i = 0; i < xt.size(); ++i) gx[i] = st[0] * gy[i];
          g.accumulate(xid, std::move(gx));
        }
      };
    }
    return push(std::move(n));
  }

  // Single element of x as a scalar node of shape [1].
  Value index(Value x, int flat) {
    const Tensor<T>& xv = at(x).value;
    if (flat < 0 || static_cast<std::size_t>(flat) >= xv.size()) {
      throw ShapeError("index " + std::to_string(flat) + " out of range for shape " +
                       shape_str(xv.shape()));
    }
    Node n;
    n.value = Tensor<T>::scalar(xv[static_cast<std::size_t>(flat)]);
    n.requires_grad = at(x).requires_grad;
    if (n.requires_grad) {
      int xid = x.id;
      n.backward = [xid, flat](Graph& g, const Tensor<T>& gy) {
        Tensor<T> gx(g.nodes_[static_cast<std::size_t>(xid)].value.shape());
        gx[static_cast<std::size_t>(flat)] = gy[0];
        g.accumulate(xid, std::move(gx));
      };
    }
    return push(std::move(n));
  }

  // Slice sample n of a [N,C,H,W] tensor as [1,C,H,W].
  Value select_sample(Value x, int sample) {
    const Tensor<T>& xv = at(x).value;
    if (xv.ndim() != 4) {
      throw ShapeError("select_sample expects 4-d input, got " + shape_str(xv.shape()));
    }
    if (sample < 0 || sample >= xv.dim(0)) {
      throw ShapeError("sample " + std::to_string(sample) + " out of range for batch " +
                       std::to_string(xv.dim(0)));
    }
    std::size_t plane = xv.size() / static_cast<std::size_t>(xv.dim(0));
    Node n;
    n.value = Tensor<T>({1, xv.dim(1), xv.dim(2), xv.dim(3)});
    const T* src = xv.data() + static_cast<std::size_t>(sample) * plane;
    for (std::size_t i = 0; i < plane; ++i) n.value[i] = src[i];
    n.requires_grad = at(x).requires_grad;
    if (n.requires_grad) {
      int xid = x.id;
      n.backward = [xid, sample, plane](Graph& g, const Tensor<T>& gy) {
        Tensor<T> gx(g.nodes_[static_cast<std::size_t>(xid)].value.shape());
        T* dst = gx.data() + static_cast<std::size_t>(sample) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = gy[i];
        g.accumulate(xid, std::move(gx));
      };
    }
    return push(std::move(n));
  }

  // Stack [1,C,H,W] slices back into [N,C,H,W], in the given order.
  Value concat_samples(const std::vector<Value>& slices) {
    if (slices.empty()) throw ShapeError("concat_samples needs at least one slice");
    const Tensor<T>& first = at(slices[0]).value;
    if (first.ndim() != 4 || first.dim(0) != 1) {
      throw ShapeError("concat_samples expects [1,C,H,W] slices, got " +
                       shape_str(first.shape()));
    }
    std::size_t plane = first.size();
    Node n;
    n.value = Tensor<T>({static_cast<int>(slices.size()), first.dim(1), first.dim(2),
                         first.dim(3)});
    n.requires_grad = false;
    std::vector<int> ids;
    ids.reserve(slices.size());
    for (std::size_t s = 0; s < slices.size(); ++s) {
      const Tensor<T>& sv = at(slices[s]).value;
      if (!sv.same_shape(first)) {
        throw ShapeError("concat_samples slice " + std::to_string(s) + " has shape " +
                         shape_str(sv.shape()) + ", expected " +
                         shape_str(first.shape()));
      }
      T* dst = n.value.data() + s * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = sv[i];
      n.requires_grad = n.requires_grad || at(slices[s]).requires_grad;
      ids.push_back(slices[s].id);
    }
    if (n.requires_grad) {
      n.backward = [ids, plane](Graph& g, const Tensor<T>& gy) {
        for (std::size_t s = 0; s < ids.size(); ++s) {
          if (!g.needs(ids[s])) continue;
          Tensor<T> gs(g.nodes_[static_cast<std::size_t>(ids[s])].value.shape());
          const T* src = gy.data() + s * plane;
          for (std::size_t i = 0; i < plane; ++i) gs[i] = src[i];
          g.accumulate(ids[s], std::move(gs));
        }
      };
    }
    return push(std::move(n));
  }

  // Mean over every element, as a [1] node.
  Value mean_all(Value x) {
    const Tensor<T>& xv = at(x).value;
    Node n;
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
    n.value = Tensor<T>::scalar(acc / static_cast<T>(xv.size()));
    n.requires_grad = at(x).requires_grad;
    if (n.requires_grad) {
      int xid = x.id;
      n.backward = [xid](Graph& g, const Tensor<T>& gy) {
        const Tensor<T>& xt = g.nodes_[static_cast<std::size_t>(xid)].value;
        T share = gy[0] / static_cast<T>(xt.size());
        g.accumulate(xid, Tensor<T>::full(xt.shape(), share));
      };
    }
    return push(std::move(n));
  }

  Value softmax_cross_entropy(Value logits, std::vector<int> labels) {
    Node n;
    Tensor<T> softmax;
    n.value = Tensor<T>::scalar(
        detail::softmax_cross_entropy_fwd(at(logits).value, labels, &softmax));
    n.requires_grad = at(logits).requires_grad;
    if (n.requires_grad) {
      int lid = logits.id;
      n.backward = [lid, softmax = std::move(softmax),
                    labels = std::move(labels)](Graph& g, const Tensor<T>& gy) {
        g.accumulate(lid, detail::softmax_cross_entropy_bwd(gy[0], softmax, labels));
      };
    }
    return push(std::move(n));
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Graph&, const Tensor<T>&)> backward;
  };

  Value push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& at(Value v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw StateError("value does not belong to this graph");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  bool any_requires(std::initializer_list<Value> vs) const {
    for (Value v : vs) {
      if (at(v).requires_grad) return true;
    }
    return false;
  }

  void accumulate(int id, Tensor<T> g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!g.same_shape(n.value)) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) +
                       " does not match value shape " + shape_str(n.value.shape()));
    }
    if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  CountScope scope(MacBucket b) const { return CountScope{counter_, layer_, b}; }

  std::vector<Node> nodes_;
  MacCounter* counter_ = nullptr;
  std::string layer_;
  bool consumed_ = false;
};

}  // namespace zootune
