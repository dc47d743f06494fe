// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0

#include "ca2n/gradcheck.hpp"

namespace ca2n {

namespace {

using detail::max_gap_ok;
using detail::smooth_uniform;
using detail::weighted_sum;

using TV = std::vector<Tensor<double>>;

Tensor<double> weights_for(const Shape& s, Rng& rng) {
    return rand_uniform<double>(s, rng, -1.0, 1.0);
}

// Unary op on a smooth-random tensor, loss = weighted sum of outputs.
GradCase unary_case(std::string name, std::function<Tensor<double>(const Tensor<double>&)> op,
                    double lo, double hi, std::vector<double> avoid = {}) {
    GradCase c;
    c.name = std::move(name);
    c.make_inputs = [op, lo, hi, avoid](Rng& rng) {
        Shape s{2, 3, 4, 5};
        TV in;
        in.push_back(smooth_uniform(s, rng, lo, hi, avoid));
        in[0].set_trainable();
        in.push_back(weights_for(op(in[0]).shape(), rng));
        return in;
    };
    c.fn = [op](const TV& in) { return weighted_sum(op(in[0]), in[1]); };
    return c;
}

GradCase binary_case(std::string name,
                     std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> op,
                     double blo, double bhi) {
    GradCase c;
    c.name = std::move(name);
    c.make_inputs = [blo, bhi](Rng& rng) {
        Shape s{2, 3, 4, 5};
        TV in;
        in.push_back(rand_uniform<double>(s, rng, -1.0, 1.0));
        in.push_back(smooth_uniform(s, rng, blo, bhi, {0.0}, 0.05));
        in[0].set_trainable();
        in[1].set_trainable();
        in.push_back(weights_for(s, rng));
        return in;
    };
    c.fn = [op](const TV& in) { return weighted_sum(op(in[0], in[1]), in[2]); };
    return c;
}

Tensor<double> pool_safe_input(Shape s, Rng& rng, int window, int stride) {
    // resample until every max-pool window has a clear winner
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    for (int tries = 0; tries < 128; ++tries) {
        auto t = rand_uniform<double>(s, rng, -1.0, 1.0);
        bool ok = true;
        const int OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
        for (int n = 0; n < N && ok; ++n)
            for (int c = 0; c < C && ok; ++c)
                for (int oh = 0; oh < OH && ok; ++oh)
                    for (int ow = 0; ow < OW && ok; ++ow) {
                        std::vector<double> vals;
                        for (int r = 0; r < window; ++r)
                            for (int q = 0; q < window; ++q)
                                vals.push_back(t.at({n, c, oh * stride + r, ow * stride + q}));
                        ok = max_gap_ok(vals, 1e-3);
                    }
        if (ok) return t;
    }
    throw InvalidInput("pool_safe_input: could not draw tie-free tensor");
}

Tensor<double> channel_gap_input(Shape s, Rng& rng) {
    // clear per-position winner across channels
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    for (int tries = 0; tries < 128; ++tries) {
        auto t = rand_uniform<double>(s, rng, -1.0, 1.0);
        bool ok = true;
        for (int n = 0; n < N && ok; ++n)
            for (int h = 0; h < H && ok; ++h)
                for (int w = 0; w < W && ok; ++w) {
                    std::vector<double> vals;
                    for (int c = 0; c < C; ++c) vals.push_back(t.at({n, c, h, w}));
                    ok = max_gap_ok(vals, 1e-3);
                }
        if (ok) return t;
    }
    throw InvalidInput("channel_gap_input: could not draw tie-free tensor");
}

}  // namespace

std::vector<GradCase> standard_grad_cases() {
    std::vector<GradCase> cases;

    cases.push_back(binary_case("add", [](auto a, auto b) { return add(a, b); }, -1.0, 1.0));
    cases.push_back(binary_case("sub", [](auto a, auto b) { return sub(a, b); }, -1.0, 1.0));
    cases.push_back(binary_case("mul", [](auto a, auto b) { return mul(a, b); }, -1.0, 1.0));
    cases.push_back(binary_case("div", [](auto a, auto b) { return div(a, b); }, 0.4, 1.6));

    cases.push_back(unary_case("add_scalar",
                               [](const Tensor<double>& x) { return add_scalar(x, 0.37); }, -1, 1));
    cases.push_back(unary_case("mul_scalar",
                               [](const Tensor<double>& x) { return mul_scalar(x, -2.5); }, -1, 1));
    cases.push_back(unary_case("abs", [](const Tensor<double>& x) { return abs(x); }, -1, 1,
                               {0.0}));
    cases.push_back(unary_case("clamp",
                               [](const Tensor<double>& x) { return clamp(x, -0.5, 0.5); }, -1, 1,
                               {-0.5, 0.5}));
    cases.push_back(unary_case("log", [](const Tensor<double>& x) { return log(x); }, 0.2, 2.0));
    cases.push_back(unary_case("sqrt", [](const Tensor<double>& x) { return sqrt(x); }, 0.2, 2.0));
    cases.push_back(unary_case("relu", [](const Tensor<double>& x) { return relu(x); }, -1, 1,
                               {0.0}));
    cases.push_back(unary_case("leaky_relu",
                               [](const Tensor<double>& x) { return leaky_relu(x, 0.2); }, -1, 1,
                               {0.0}));
    cases.push_back(unary_case("sigmoid", [](const Tensor<double>& x) { return sigmoid(x); },
                               -3, 3));
    cases.push_back(unary_case("tanh", [](const Tensor<double>& x) { return tanh(x); }, -3, 3));
    cases.push_back(unary_case("reshape", [](const Tensor<double>& x) {
        return reshape(x, {6, 20});
    }, -1, 1));
    cases.push_back(unary_case("upsample_nearest2x", [](const Tensor<double>& x) {
        return upsample_nearest2x(x);
    }, -1, 1));
    cases.push_back(unary_case("mean_hw", [](const Tensor<double>& x) { return mean_hw(x); },
                               -1, 1));
    cases.push_back(unary_case("crop", [](const Tensor<double>& x) {
        return crop(x, SpatialBox{1, 0, 3, 2});
    }, -1, 1));

    {
        GradCase c;
        c.name = "reduce_mean";
        c.make_inputs = [](Rng& rng) {
            TV in{rand_uniform<double>({3, 7}, rng, -1, 1)};
            in[0].set_trainable();
            return in;
        };
        c.fn = [](const TV& in) { return reduce_mean(in[0]); };
        cases.push_back(c);

        c.name = "reduce_sum";
        c.fn = [](const TV& in) { return reduce_sum(in[0]); };
        cases.push_back(c);

        c.name = "reduce_sum_rows";
        c.make_inputs = [](Rng& rng) {
            TV in{rand_uniform<double>({3, 7}, rng, -1, 1)};
            in[0].set_trainable();
            in.push_back(rand_uniform<double>({3}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) { return weighted_sum(reduce_sum_rows(in[0]), in[1]); };
        cases.push_back(c);
    }

    {
        GradCase c;
        c.name = "linear";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({3, 5}, rng, -1, 1));
            in.push_back(rand_uniform<double>({4, 5}, rng, -1, 1));
            in.push_back(rand_uniform<double>({4}, rng, -1, 1));
            for (auto& t : in) t.set_trainable();
            in.push_back(rand_uniform<double>({3, 4}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) {
            return weighted_sum(linear(in[0], in[1], in[2]), in[3]);
        };
        cases.push_back(c);

        c.name = "linear_nobias";
        c.fn = [](const TV& in) {
            return weighted_sum(linear(in[0], in[1], Tensor<double>()), in[3]);
        };
        cases.push_back(c);
    }

    auto conv_case = [](std::string name, int stride, int pad, bool tconv, bool bias) {
        GradCase c;
        c.name = std::move(name);
        c.make_inputs = [tconv, stride, pad](Rng& rng) {
            TV in;
            const int C = 2, K = 3, H = 5, W = 6, kh = (stride == 2 && tconv) ? 4 : 3;
            in.push_back(rand_uniform<double>({2, C, H, W}, rng, -1, 1));
            in.push_back(tconv ? rand_uniform<double>({C, K, kh, kh}, rng, -0.5, 0.5)
                               : rand_uniform<double>({K, C, kh, kh}, rng, -0.5, 0.5));
            in.push_back(rand_uniform<double>({K}, rng, -0.5, 0.5));
            for (auto& t : in) t.set_trainable();
            Tensor<double> probe =
                tconv ? conv2d_transpose(in[0], in[1], Tensor<double>(), stride, pad)
                      : conv2d(in[0], in[1], Tensor<double>(), stride, pad);
            in.push_back(rand_uniform<double>(probe.shape(), rng, -1, 1));
            return in;
        };
        c.fn = [tconv, stride, pad, bias](const TV& in) {
            Tensor<double> b = bias ? in[2] : Tensor<double>();
            Tensor<double> y = tconv ? conv2d_transpose(in[0], in[1], b, stride, pad)
                                     : conv2d(in[0], in[1], b, stride, pad);
            return weighted_sum(y, in[3]);
        };
        return c;
    };
    cases.push_back(conv_case("conv2d_s1p0", 1, 0, false, true));
    cases.push_back(conv_case("conv2d_s1p1", 1, 1, false, true));
    cases.push_back(conv_case("conv2d_s2p1", 2, 1, false, true));
    cases.push_back(conv_case("conv2d_nobias", 2, 1, false, false));
    cases.push_back(conv_case("conv2d_transpose_s1p1", 1, 1, true, true));
    cases.push_back(conv_case("conv2d_transpose_s2p1", 2, 1, true, true));

    auto pool_case = [](std::string name, PoolKind kind, int window, int stride) {
        GradCase c;
        c.name = std::move(name);
        c.make_inputs = [kind, window, stride](Rng& rng) {
            Shape s{2, 2, 5, 6};
            TV in;
            in.push_back(kind == PoolKind::Max ? pool_safe_input(s, rng, window, stride)
                                               : rand_uniform<double>(s, rng, -1, 1));
            in[0].set_trainable();
            const int OH = (5 - window) / stride + 1, OW = (6 - window) / stride + 1;
            in.push_back(rand_uniform<double>({2, 2, OH, OW}, rng, -1, 1));
            return in;
        };
        c.fn = [kind, window, stride](const TV& in) {
            return weighted_sum(pool(in[0], kind, window, stride), in[1]);
        };
        return c;
    };
    cases.push_back(pool_case("pool_max", PoolKind::Max, 2, 2));
    cases.push_back(pool_case("pool_max_overlap", PoolKind::Max, 3, 1));
    cases.push_back(pool_case("pool_avg", PoolKind::Avg, 2, 2));

    {
        GradCase c;
        c.name = "global_pool_max";
        c.make_inputs = [](Rng& rng) {
            TV in;
            // draw until each full plane has a clear winner
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            for (int tries = 0; tries < 128; ++tries) {
                bool ok = true;
                for (int n = 0; n < 2 && ok; ++n)
                    for (int ch = 0; ch < 3 && ok; ++ch) {
                        std::vector<double> vals;
                        for (int h = 0; h < 4; ++h)
                            for (int w = 0; w < 5; ++w) vals.push_back(in[0].at({n, ch, h, w}));
                        ok = max_gap_ok(vals, 1e-3);
                    }
                if (ok) break;
                in[0] = rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1);
            }
            in[0].set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 1, 1}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) {
            return weighted_sum(global_pool(in[0], PoolKind::Max), in[1]);
        };
        cases.push_back(c);

        c.name = "global_pool_avg";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            in[0].set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 1, 1}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) {
            return weighted_sum(global_pool(in[0], PoolKind::Avg), in[1]);
        };
        cases.push_back(c);
    }

    {
        GradCase c;
        c.name = "channel_stats";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(channel_gap_input({2, 4, 3, 5}, rng));
            in[0].set_trainable();
            in.push_back(rand_uniform<double>({2, 2, 3, 5}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) { return weighted_sum(channel_stats(in[0]), in[1]); };
        cases.push_back(c);
    }

    {
        GradCase c;
        c.name = "scale_channels";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            in.push_back(rand_uniform<double>({2, 3}, rng, -1, 1));
            in[0].set_trainable();
            in[1].set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) { return weighted_sum(scale_channels(in[0], in[1]), in[2]); };
        cases.push_back(c);

        c.name = "scale_spatial";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            in.push_back(rand_uniform<double>({2, 1, 4, 5}, rng, -1, 1));
            in[0].set_trainable();
            in[1].set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) { return weighted_sum(scale_spatial(in[0], in[1]), in[2]); };
        cases.push_back(c);
    }

    {
        GradCase c;
        c.name = "instance_norm";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            in.push_back(rand_uniform<double>({3}, rng, 0.5, 1.5));
            in.push_back(rand_uniform<double>({3}, rng, -0.5, 0.5));
            for (auto& t : in) t.set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 4, 5}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) {
            return weighted_sum(instance_norm(in[0], in[1], in[2]), in[3]);
        };
        cases.push_back(c);

        c.name = "instance_norm_small";  // sub-threshold planes pass through
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 3, 1, 1}, rng, -1, 1));
            in.push_back(rand_uniform<double>({3}, rng, 0.5, 1.5));
            in.push_back(rand_uniform<double>({3}, rng, -0.5, 0.5));
            for (auto& t : in) t.set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 1, 1}, rng, -1, 1));
            return in;
        };
        cases.push_back(c);
    }

    {
        GradCase c;
        c.name = "concat";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 2, 3, 4}, rng, -1, 1));
            in.push_back(rand_uniform<double>({2, 3, 3, 4}, rng, -1, 1));
            in[0].set_trainable();
            in[1].set_trainable();
            in.push_back(rand_uniform<double>({2, 5, 3, 4}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) {
            return weighted_sum(concat<double>({in[0], in[1]}, 1), in[2]);
        };
        cases.push_back(c);
    }

    {
        GradCase c;
        c.name = "paste";
        c.make_inputs = [](Rng& rng) {
            TV in;
            in.push_back(rand_uniform<double>({2, 3, 6, 7}, rng, -1, 1));
            in.push_back(rand_uniform<double>({2, 3, 2, 3}, rng, -1, 1));
            in[0].set_trainable();
            in[1].set_trainable();
            in.push_back(rand_uniform<double>({2, 3, 6, 7}, rng, -1, 1));
            return in;
        };
        c.fn = [](const TV& in) {
            return weighted_sum(paste(in[0], in[1], SpatialBox{2, 1, 3, 2}), in[2]);
        };
        cases.push_back(c);
    }

    return cases;
}

}  // namespace ca2n
