// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/neural_map.hpp"

#include <cmath>

namespace rfslam
{
    namespace
    {
        void check_finite(const Vec &v, const char *what)
        {
            if (!v.allFinite())
                throw NumericalDegeneracy(std::string("neural map: non-finite activation in ") + what);
        }

        Vec relu(const Vec &x) { return x.cwiseMax(0.0); }

        void he_uniform(DenseLayer &l, Rng &rng)
        {
            const double lim = std::sqrt(6.0 / static_cast<double>(l.W.cols()));
            std::uniform_real_distribution<double> u(-lim, lim);
            for (Eigen::Index i = 0; i < l.W.size(); ++i)
                l.W.data()[i] = u(rng);
            l.b.setZero();
        }

        double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
    } // namespace

    void MapArchitecture::validate() const
    {
        if (num_features < 1)
            throw InvalidArgument("MapArchitecture: D must be >= 1");
        if (num_encodings < 0)
            throw InvalidArgument("MapArchitecture: N_enc must be >= 0");
        if (hidden1 < 1 || hidden2 < 1)
            throw InvalidArgument("MapArchitecture: hidden sizes must be >= 1");
        if (!(position_scale > 0.0) || !(variance_scale > 0.0))
            throw InvalidArgument("MapArchitecture: output scales must be positive");
    }

    EncodingFrame EncodingFrame::from_bounds(const BoundingBox &box)
    {
        EncodingFrame f;
        f.center = box.center();
        f.extent = box.diagonal() > 0.0 ? box.diagonal() : 1.0;
        return f;
    }

    Vec encode_position(const Vec2 &p_bs, int num_encodings, const EncodingFrame &frame)
    {
        if (num_encodings < 0)
            throw InvalidArgument("encode_position: N_enc must be >= 0");
        const Vec2 pt = (p_bs - frame.center) / frame.extent;
        Vec out(2 * (1 + num_encodings));
        out[0] = pt.x();
        out[1] = pt.y();
        for (int i = 0; i < num_encodings; ++i)
        {
            const double f = std::ldexp(kPi, i);
            out[2 + 2 * i] = std::sin(f * pt.x());
            out[3 + 2 * i] = std::sin(f * pt.y());
        }
        return out;
    }

    Mlp Mlp::zeros(int in, int h1, int h2, int out)
    {
        Mlp m;
        m.l1 = {Eigen::MatrixXd::Zero(h1, in), Vec::Zero(h1)};
        m.l2 = {Eigen::MatrixXd::Zero(h2, h1), Vec::Zero(h2)};
        m.l3 = {Eigen::MatrixXd::Zero(out, h2), Vec::Zero(out)};
        return m;
    }

    int Mlp::parameter_count(int in, int h1, int h2, int out)
    {
        return h1 * in + h1 + h2 * h1 + h2 + out * h2 + out;
    }

    int Mlp::size() const
    {
        return static_cast<int>(l1.W.size() + l1.b.size() + l2.W.size() + l2.b.size() + l3.W.size() + l3.b.size());
    }

    Vec Mlp::forward(const Vec &x) const
    {
        if (x.size() != l1.W.cols())
            throw InvalidArgument("Mlp::forward: input dimension mismatch");
        const Vec a1 = relu(l1.W * x + l1.b);
        const Vec a2 = relu(l2.W * a1 + l2.b);
        Vec y = l3.W * a2 + l3.b;
        check_finite(y, "MLP output");
        return y;
    }

    Vec Mlp::hidden(const Vec &x) const
    {
        if (x.size() != l1.W.cols())
            throw InvalidArgument("Mlp::hidden: input dimension mismatch");
        return relu(l2.W * relu(l1.W * x + l1.b) + l2.b);
    }

    void Mlp::backward(const Vec &x, const Vec &g, Eigen::Ref<Vec> grad) const
    {
        if (g.size() != l3.W.rows() || grad.size() != size())
            throw InvalidArgument("Mlp::backward: shape mismatch");
        const Vec z1 = l1.W * x + l1.b;
        const Vec a1 = relu(z1);
        const Vec z2 = l2.W * a1 + l2.b;
        const Vec a2 = relu(z2);

        Eigen::Index off = 0;
        auto put_matrix = [&](const Eigen::MatrixXd &m)
        {
            grad.segment(off, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
            off += m.size();
        };
        auto put_vector = [&](const Vec &v)
        {
            grad.segment(off, v.size()) = v;
            off += v.size();
        };

        const Vec g3 = g;
        Vec g2 = l3.W.transpose() * g3;
        for (Eigen::Index i = 0; i < g2.size(); ++i)
            if (!(z2[i] > 0.0))
                g2[i] = 0.0;
        Vec g1 = l2.W.transpose() * g2;
        for (Eigen::Index i = 0; i < g1.size(); ++i)
            if (!(z1[i] > 0.0))
                g1[i] = 0.0;

        put_matrix(g1 * x.transpose());
        put_vector(g1);
        put_matrix(g2 * a1.transpose());
        put_vector(g2);
        put_matrix(g3 * a2.transpose());
        put_vector(g3);
    }

    void Mlp::write(Eigen::Ref<Vec> flat) const
    {
        Eigen::Index off = 0;
        for (const DenseLayer *l : {&l1, &l2, &l3})
        {
            flat.segment(off, l->W.size()) = Eigen::Map<const Vec>(l->W.data(), l->W.size());
            off += l->W.size();
            flat.segment(off, l->b.size()) = l->b;
            off += l->b.size();
        }
    }

    void Mlp::read(const Eigen::Ref<const Vec> &flat)
    {
        Eigen::Index off = 0;
        for (DenseLayer *l : {&l1, &l2, &l3})
        {
            Eigen::Map<Vec>(l->W.data(), l->W.size()) = flat.segment(off, l->W.size());
            off += l->W.size();
            l->b = flat.segment(off, l->b.size());
            off += l->b.size();
        }
    }

    MlpParams MlpParams::zeros(const MapArchitecture &arch)
    {
        arch.validate();
        MlpParams p;
        p.position_net = Mlp::zeros(arch.input_dim(), arch.hidden1, arch.hidden2, 3 * arch.num_features);
        p.variance_net = Mlp::zeros(arch.input_dim(), arch.hidden1, arch.hidden2, arch.num_features);
        return p;
    }

    int MlpParams::parameter_count(const MapArchitecture &arch)
    {
        return Mlp::parameter_count(arch.input_dim(), arch.hidden1, arch.hidden2, 3 * arch.num_features) +
               Mlp::parameter_count(arch.input_dim(), arch.hidden1, arch.hidden2, arch.num_features);
    }

    Vec MlpParams::flat() const
    {
        const int np = position_net.size();
        Vec theta(np + variance_net.size());
        position_net.write(theta.head(np));
        variance_net.write(theta.tail(variance_net.size()));
        return theta;
    }

    void MlpParams::set_flat(const Vec &theta)
    {
        const int np = position_net.size();
        if (theta.size() != np + variance_net.size())
            throw InvalidArgument("MlpParams::set_flat: parameter vector length mismatch");
        if (!theta.allFinite())
            throw InvalidArgument("MlpParams::set_flat: non-finite parameters");
        position_net.read(theta.head(np));
        variance_net.read(theta.tail(variance_net.size()));
    }

    NeuralMap::NeuralMap(MapArchitecture arch, EncodingFrame frame, MlpParams params)
        : arch_(arch), frame_(frame), params_(std::move(params))
    {
        arch_.validate();
        const int expected = MlpParams::parameter_count(arch_);
        if (params_.position_net.size() + params_.variance_net.size() != expected ||
            params_.position_net.l1.W.cols() != arch_.input_dim() ||
            params_.position_net.l3.W.rows() != 3 * arch_.num_features ||
            params_.variance_net.l3.W.rows() != arch_.num_features)
            throw InvalidArgument("NeuralMap: parameter shapes do not match the architecture");
        if (!(frame_.extent > 0.0))
            throw InvalidArgument("NeuralMap: encoding extent must be positive");
    }

    NeuralMap NeuralMap::initialize(const MapArchitecture &arch, const EncodingFrame &frame, const BoundingBox &box,
                                    Rng &rng)
    {
        MlpParams p = MlpParams::zeros(arch);
        for (Mlp *m : {&p.position_net, &p.variance_net})
        {
            he_uniform(m->l1, rng);
            he_uniform(m->l2, rng);
            he_uniform(m->l3, rng);
        }
        std::uniform_real_distribution<double> ux(box.lo.x(), box.hi.x()), uy(box.lo.y(), box.hi.y());
        const double s = arch.position_scale;
        for (int n = 0; n < arch.num_features; ++n)
        {
            p.position_net.l3.b[3 * n] = ux(rng) / s;
            p.position_net.l3.b[3 * n + 1] = uy(rng) / s;
            p.position_net.l3.b[3 * n + 2] = 0.1 / s;
            p.variance_net.l3.b[n] = 0.1;
        }
        // Keep the initial output spread small relative to the scatter
        p.position_net.l3.W *= 0.1;
        p.variance_net.l3.W *= 0.01;
        return NeuralMap(arch, frame, std::move(p));
    }

    MapFeatures NeuralMap::predict(const Vec2 &p_bs) const
    {
        const Vec x = encode_position(p_bs, arch_.num_encodings, frame_);
        const Vec yp = params_.position_net.forward(x);
        const Vec yr = params_.variance_net.forward(x);
        const double s = arch_.position_scale;
        MapFeatures out(arch_.num_features);
        for (int n = 0; n < arch_.num_features; ++n)
        {
            out[n].position = Vec2(yp[3 * n], yp[3 * n + 1]) * s;
            out[n].bias = std::abs(yp[3 * n + 2]) * s / kSpeedOfLight;
            out[n].variance = std::abs(yr[n]) * arch_.variance_scale;
        }
        return out;
    }

    Vec NeuralMap::backward(const Vec2 &p_bs, const std::vector<FeatureGradient> &up) const
    {
        if (static_cast<int>(up.size()) != arch_.num_features)
            throw InvalidArgument("NeuralMap::backward: one upstream gradient per feature is required");
        const Vec x = encode_position(p_bs, arch_.num_encodings, frame_);
        const Vec yp = params_.position_net.forward(x);
        const Vec yr = params_.variance_net.forward(x);
        const double s = arch_.position_scale;
        Vec gp(3 * arch_.num_features), gr(arch_.num_features);
        for (int n = 0; n < arch_.num_features; ++n)
        {
            gp[3 * n] = up[n].d_position.x() * s;
            gp[3 * n + 1] = up[n].d_position.y() * s;
            gp[3 * n + 2] = up[n].d_bias * sgn(yp[3 * n + 2]) * s / kSpeedOfLight;
            gr[n] = up[n].d_variance * sgn(yr[n]) * arch_.variance_scale;
        }
        const int np = params_.position_net.size();
        Vec grad(np + params_.variance_net.size());
        params_.position_net.backward(x, gp, grad.head(np));
        params_.variance_net.backward(x, gr, grad.tail(params_.variance_net.size()));
        return grad;
    }

    MapFeatures predict_map(const Vec2 &p_bs, const NeuralMap &map) { return map.predict(p_bs); }

    Vec map_backward(const Vec2 &p_bs, const NeuralMap &map, const std::vector<FeatureGradient> &upstream)
    {
        return map.backward(p_bs, upstream);
    }

    AdamState AdamState::create(Eigen::Index n, double lr)
    {
        AdamState s;
        s.m = Vec::Zero(n);
        s.v = Vec::Zero(n);
        s.lr = lr;
        return s;
    }

    void adam_step(Vec &theta, const Vec &grad, AdamState &st)
    {
        if (grad.size() != theta.size() || st.m.size() != theta.size() || st.v.size() != theta.size())
            throw InvalidArgument("adam_step: length mismatch");
        ++st.step;
        st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
        st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
        const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
        for (Eigen::Index i = 0; i < theta.size(); ++i)
        {
            const double mh = st.m[i] / c1;
            const double vh = st.v[i] / c2;
            theta[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
        }
    }

} // namespace rfslam
