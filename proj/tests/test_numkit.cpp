#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <functional>

#include "test_util.hpp"

using namespace descore;
using namespace descore::numkit;
using testutil::random_tensor;

namespace {

// Rebuilds the graph from flat inputs and central-differences every coordinate
// against the tape gradient.
void check_grad(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& build,
                const std::vector<Tensor>& inputs, double rtol = 1e-6, double atol = 1e-9) {
    Tape tape;
    std::vector<Tensor> bound;
    bound.reserve(inputs.size());
    for (const Tensor& t : inputs) bound.push_back(tape.watch(t));
    const Tensor loss = build(tape, bound);
    const Gradients grads = tape.backward(loss);

    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : inputs) ptrs.push_back(&t);
    std::vector<double> analytic;
    for (const Tensor& b : bound) {
        const Tensor& g = grads.at(b);
        analytic.insert(analytic.end(), g.data.begin(), g.data.end());
    }

    auto f = [&](const std::vector<double>& flat) {
        std::vector<Tensor> local = inputs;
        std::vector<Tensor*> mut;
        for (Tensor& t : local) mut.push_back(&t);
        unflatten(flat, mut);
        Tape t2;
        std::vector<Tensor> b2;
        for (Tensor& t : local) b2.push_back(t2.watch(t));
        return build(t2, b2).item();
    };
    FiniteDiffOptions opts;
    opts.rtol = rtol;
    opts.atol = atol;
    const CheckReport report = finite_diff_check(f, flatten(ptrs), analytic, opts);
    INFO("max_rel_err=", report.max_rel_err, " max_abs_err=", report.max_abs_err,
         " worst=", report.worst_index);
    CHECK(report.pass);
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace

TEST_CASE("forward op values") {
    Tape tape(false);

    SUBCASE("sigmoid(0) = 0.5") {
        CHECK(tape.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    }
    SUBCASE("softmax of equal logits is uniform") {
        const Tensor y = tape.softmax(Tensor({3}, {0.0, 0.0, 0.0}));
        for (double v : y.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("log(sigmoid(2)) matches the high-precision oracle") {
        // Frozen from -log1p(exp(-2)) evaluated in long double.
        const double expected = -0.12692801104297249;
        CHECK(static_cast<double>(testutil::log_sigmoid_ld(2.0L)) ==
              doctest::Approx(expected).epsilon(1e-15));
        const double got = tape.log(tape.sigmoid(Tensor::scalar(2.0))).item();
        CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("layernorm normalizes rows") {
        Rng rng(7);
        const Tensor x = random_tensor({3, 8}, rng);
        const Tensor g = Tensor::full({8}, 1.0);
        const Tensor b = Tensor::zeros({8});
        const Tensor y = tape.layernorm(x, g, b, 1e-5);
        for (int r = 0; r < 3; ++r) {
            double mu = 0.0;
            for (int j = 0; j < 8; ++j) mu += y.at(r, j);
            CHECK(std::abs(mu / 8.0) < 1e-12);
        }
    }
    SUBCASE("matmul matches a hand example") {
        const Tensor a({2, 2}, {1, 2, 3, 4});
        const Tensor b({2, 2}, {5, 6, 7, 8});
        const Tensor c = tape.matmul(a, b);
        CHECK(c.data == std::vector<double>({19, 22, 43, 50}));
    }
}

TEST_CASE("op error paths") {
    Tape tape;
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(tape.add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), NumericError);
        CHECK_THROWS_AS(tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), NumericError);
    }
    SUBCASE("non-finite result is a hard error") {
        CHECK_THROWS_AS(tape.log(Tensor::scalar(-1.0)), NumericError);
        CHECK_THROWS_AS(tape.exp(Tensor::scalar(1e4)), NumericError);
    }
    SUBCASE("embed id out of range") {
        const Tensor table = Tensor::zeros({4, 2});
        const std::vector<int> ids = {0, 4};
        CHECK_THROWS_AS(tape.embed(table, ids), NumericError);
    }
    SUBCASE("backward requires a scalar loss on this tape") {
        Tape t2;
        const Tensor x = t2.watch(Tensor({2}, {1.0, 2.0}));
        CHECK_THROWS_AS(t2.backward(x), NumericError);
        const Tensor detached = Tensor::scalar(1.0);
        CHECK_THROWS_AS(t2.backward(detached), NumericError);
    }
    SUBCASE("tape consumed by backward") {
        Tape t2;
        const Tensor x = t2.watch(Tensor::scalar(1.5));
        const Tensor loss = t2.mul(x, x);
        (void)t2.backward(loss);
        CHECK_THROWS_AS(t2.backward(loss), NumericError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("d(x*x)/dx = 2x at x=3") {
        Tape tape;
        const Tensor x = tape.watch(Tensor::scalar(3.0));
        const Gradients g = tape.backward(tape.mul(x, x));
        CHECK(g.at(x).item() == doctest::Approx(6.0).epsilon(1e-15));
    }
    SUBCASE("d sigmoid/dx at 0 = 0.25") {
        Tape tape;
        const Tensor x = tape.watch(Tensor::scalar(0.0));
        const Gradients g = tape.backward(tape.sigmoid(x));
        CHECK(g.at(x).item() == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("pairwise logistic loss pushes scores apart at a tie") {
        // loss = -log sigmoid(s_w - s_l) at (0,0): d/ds_w = -0.5, d/ds_l = +0.5
        Tape tape;
        const Tensor sw = tape.watch(Tensor::scalar(0.0));
        const Tensor sl = tape.watch(Tensor::scalar(0.0));
        const Tensor loss = tape.mul_scalar(tape.log(tape.sigmoid(tape.sub(sw, sl))), -1.0);
        CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
        const Gradients g = tape.backward(loss);
        CHECK(g.at(sw).item() == doctest::Approx(-0.5).epsilon(1e-12));
        CHECK(g.at(sl).item() == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("untouched leaves get zero gradients") {
        Tape tape;
        const Tensor x = tape.watch(Tensor::scalar(2.0));
        const Tensor unused = tape.watch(Tensor({3}, {1.0, 2.0, 3.0}));
        const Gradients g = tape.backward(tape.mul(x, x));
        CHECK(g.has(unused));
        for (double v : g.at(unused).data) CHECK(v == 0.0);
    }
}

TEST_CASE("composed chain matches the hand-expanded chain rule") {
    // L = log(sigmoid(x*x)): dL/dx = (1 - sigmoid(x^2)) * 2x
    for (double xv : {-1.7, -0.4, 0.3, 1.1, 2.0}) {
        Tape tape;
        const Tensor x = tape.watch(Tensor::scalar(xv));
        const Tensor loss = tape.log(tape.sigmoid(tape.mul(x, x)));
        const Gradients g = tape.backward(loss);
        const double hand = (1.0 - sigmoid_stable(xv * xv)) * 2.0 * xv;
        CHECK(g.at(x).item() == doctest::Approx(hand).epsilon(1e-12));
    }
}

TEST_CASE("every primitive op matches central finite differences") {
    Rng rng(1234);

    SUBCASE("elementwise ops on 100 random points") {
        auto unary = [&](auto op, double lo, double hi) {
            const Tensor x = random_tensor({100}, rng, lo, hi);
            check_grad([op](Tape& t, const std::vector<Tensor>& b) { return t.mean(op(t, b[0])); },
                       {x});
        };
        unary([](Tape& t, const Tensor& x) { return t.sigmoid(x); }, -2.0, 2.0);
        unary([](Tape& t, const Tensor& x) { return t.tanh(x); }, -2.0, 2.0);
        unary([](Tape& t, const Tensor& x) { return t.exp(x); }, -2.0, 2.0);
        unary([](Tape& t, const Tensor& x) { return t.log(x); }, 0.4, 2.5);
        unary([](Tape& t, const Tensor& x) { return t.softplus(x); }, -2.0, 2.0);
        unary([](Tape& t, const Tensor& x) { return t.add_scalar(x, 0.7); }, -2.0, 2.0);
        unary([](Tape& t, const Tensor& x) { return t.mul_scalar(x, -1.3); }, -2.0, 2.0);
    }

    SUBCASE("binary elementwise ops") {
        const Tensor a = random_tensor({100}, rng);
        const Tensor b = random_tensor({100}, rng);
        check_grad([](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.add(v[0], v[1])); },
                   {a, b});
        check_grad([](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.sub(v[0], v[1])); },
                   {a, b});
        check_grad([](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.mul(v[0], v[1])); },
                   {a, b});
    }

    SUBCASE("row-broadcast add") {
        const Tensor a = random_tensor({6, 5}, rng);
        const Tensor b = random_tensor({5}, rng);
        check_grad([](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.add(v[0], v[1])); },
                   {a, b});
    }

    SUBCASE("matmul and transpose") {
        const Tensor a = random_tensor({4, 6}, rng);
        const Tensor b = random_tensor({6, 3}, rng);
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.matmul(v[0], v[1])); },
            {a, b});
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                return t.mean(t.matmul(t.transpose(v[0]), v[0]));
            },
            {a});
    }

    SUBCASE("softmax and log_softmax") {
        const Tensor x = random_tensor({10, 10}, rng);
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                const Tensor y = t.softmax(v[0]);
                return t.mean(t.mul(y, y));
            },
            {x});
        std::vector<int> picks;
        for (int i = 0; i < 10; ++i) picks.push_back(i % 10);
        check_grad(
            [picks](Tape& t, const std::vector<Tensor>& v) {
                return t.mean(t.gather_per_row(t.log_softmax(v[0]), picks));
            },
            {x});
    }

    SUBCASE("layernorm") {
        const Tensor x = random_tensor({5, 8}, rng);
        const Tensor g = random_tensor({8}, rng, 0.5, 1.5);
        const Tensor b = random_tensor({8}, rng, -0.5, 0.5);
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                const Tensor y = t.layernorm(v[0], v[1], v[2]);
                return t.mean(t.mul(y, y));
            },
            {x, g, b}, 1e-6, 1e-8);
    }

    SUBCASE("clip away from its kinks") {
        Tensor x = random_tensor({100}, rng);
        for (double& v : x.data) {
            if (std::abs(std::abs(v) - 1.0) < 1e-2) v += 0.05;
        }
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.clip(v[0], -1.0, 1.0)); },
            {x});
    }

    SUBCASE("minimum away from ties") {
        Tensor a = random_tensor({100}, rng);
        Tensor b = random_tensor({100}, rng);
        for (size_t i = 0; i < a.data.size(); ++i) {
            if (std::abs(a.data[i] - b.data[i]) < 1e-2) b.data[i] += 0.05;
        }
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) { return t.mean(t.minimum(v[0], v[1])); },
            {a, b});
    }

    SUBCASE("embedding lookup") {
        const Tensor table = random_tensor({7, 4}, rng);
        const std::vector<int> ids = {3, 1, 3, 0, 6};
        check_grad(
            [ids](Tape& t, const std::vector<Tensor>& v) {
                const Tensor e = t.embed(v[0], ids);
                return t.mean(t.mul(e, e));
            },
            {table});
    }

    SUBCASE("structural slices and concats") {
        const Tensor a = random_tensor({6, 4}, rng);
        const Tensor b = random_tensor({2, 4}, rng);
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                return t.mean(t.mul(t.rows(v[0], 1, 4), t.rows(v[0], 2, 5)));
            },
            {a});
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                return t.mean(t.mul(t.cols(v[0], 0, 2), t.cols(v[0], 2, 4)));
            },
            {a});
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                const Tensor c = t.concat_rows(v[0], v[1]);
                return t.mean(t.mul(c, c));
            },
            {a, b});
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) {
                const Tensor c = t.concat_cols({t.cols(v[0], 0, 2), t.cols(v[0], 2, 4)});
                return t.mean(t.mul(c, c));
            },
            {a});
        check_grad(
            [](Tape& t, const std::vector<Tensor>& v) { return t.sum(t.mean(v[0])); }, {a});
    }
}

TEST_CASE("tape replay determinism") {
    Rng rng(99);
    const Tensor x = random_tensor({12, 6}, rng);
    const Tensor w = random_tensor({6, 6}, rng);
    auto run = [&]() {
        Tape tape;
        const Tensor bx = tape.watch(x);
        const Tensor bw = tape.watch(w);
        const Tensor h = tape.tanh(tape.matmul(bx, bw));
        const Tensor loss = tape.mean(tape.mul(h, h));
        const Gradients g = tape.backward(loss);
        std::vector<double> flat = g.at(bx).data;
        const auto& gw = g.at(bw).data;
        flat.insert(flat.end(), gw.begin(), gw.end());
        return flat;
    };
    CHECK(bitwise_equal(run(), run()));
}

TEST_CASE("finite_diff_check behaviors") {
    SUBCASE("x^2 at x=3") {
        auto f = [](const std::vector<double>& v) { return v[0] * v[0]; };
        const CheckReport r = finite_diff_check(f, {3.0}, {6.0});
        CHECK(r.pass);
        CHECK(r.max_abs_err < 1e-6);
    }
    SUBCASE("pairwise logistic loss over random score pairs") {
        Rng rng(2024);
        for (int trial = 0; trial < 20; ++trial) {
            const double sw = rng.uniform(-3.0, 3.0);
            const double sl = rng.uniform(-3.0, 3.0);
            auto f = [](const std::vector<double>& v) {
                return softplus_stable(-(v[0] - v[1]));
            };
            const double sig = sigmoid_stable(sw - sl);
            const CheckReport r = finite_diff_check(f, {sw, sl}, {-(1.0 - sig), 1.0 - sig});
            CHECK(r.pass);
        }
    }
    SUBCASE("non-deterministic objective is rejected") {
        int calls = 0;
        auto f = [&calls](const std::vector<double>& v) {
            return v[0] + 1e-9 * (calls++);
        };
        CHECK_THROWS_WITH_AS(finite_diff_check(f, {1.0}, {1.0}),
                             "finite_diff_check: non-deterministic objective", NumericError);
    }
}
