// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Neural multipath map: two three-layer ReLU MLPs conditioned on the BS position only.
//   f_p : enc(p_bs) -> D x (x, y, bias)   positions [m] and biases (|.|, converted to seconds)
//   f_rho: enc(p_bs) -> D                 amplitude variances (|.|)
// Both networks read the same positional encoding [p~, sin(2^i pi p~)], p~ = (p - center)/extent.

#ifndef RFSLAM_NEURAL_MAP_HPP
#define RFSLAM_NEURAL_MAP_HPP

#include "rfslam/likelihood.hpp"
#include "rfslam/scenario.hpp"

namespace rfslam
{
    struct MapArchitecture
    {
        int num_features = 6;  // D
        int num_encodings = 4; // N_enc
        int hidden1 = 64;      // L_p1
        int hidden2 = 64;      // L_p2
        double position_scale = 1.0; // meters per unit of f_p output (positions and biases)
        double variance_scale = 1.0; // variance per unit of f_rho output

        int input_dim() const { return 2 * (1 + num_encodings); }
        void validate() const;
    };

    // Normalization of BS positions before encoding
    struct EncodingFrame
    {
        Vec2 center = Vec2::Zero();
        double extent = 1.0;
        static EncodingFrame from_bounds(const BoundingBox &box);
    };

    Vec encode_position(const Vec2 &p_bs, int num_encodings, const EncodingFrame &frame);

    struct DenseLayer
    {
        Eigen::MatrixXd W; // out x in
        Vec b;
    };

    struct Mlp
    {
        DenseLayer l1, l2, l3;

        static Mlp zeros(int in, int h1, int h2, int out);
        static int parameter_count(int in, int h1, int h2, int out);
        int size() const;
        Vec forward(const Vec &x) const;
        Vec hidden(const Vec &x) const; // second hidden layer activations
        // Gradient of <upstream, forward(x)> w.r.t. the flattened parameters, written to grad
        void backward(const Vec &x, const Vec &upstream, Eigen::Ref<Vec> grad) const;
        void write(Eigen::Ref<Vec> flat) const;
        void read(const Eigen::Ref<const Vec> &flat);
    };

    // Parameters of both networks. Flat layout: f_p (W1, b1, W2, b2, W3, b3), then f_rho, matrices column-major.
    struct MlpParams
    {
        Mlp position_net;
        Mlp variance_net;

        static MlpParams zeros(const MapArchitecture &arch);
        static int parameter_count(const MapArchitecture &arch);
        Vec flat() const;
        void set_flat(const Vec &theta);
    };

    // Upstream gradient for one feature
    struct FeatureGradient
    {
        Vec2 d_position = Vec2::Zero(); // d / d p_ai [1/m]
        double d_bias = 0.0;            // d / d b_ai [1/s]
        double d_variance = 0.0;        // d / d gamma_ai
    };

    class NeuralMap
    {
    public:
        NeuralMap() = default;
        NeuralMap(MapArchitecture arch, EncodingFrame frame, MlpParams params);

        // He-uniform weights; final-layer biases scatter positions uniformly inside box, biases start
        // at 0.1 m and variances at 0.1 * variance_scale.
        static NeuralMap initialize(const MapArchitecture &arch, const EncodingFrame &frame, const BoundingBox &box,
                                    Rng &rng);

        const MapArchitecture &architecture() const { return arch_; }
        const EncodingFrame &frame() const { return frame_; }
        const MlpParams &params() const { return params_; }
        int parameter_count() const { return MlpParams::parameter_count(arch_); }
        Vec parameters() const { return params_.flat(); }
        void set_parameters(const Vec &theta) { params_.set_flat(theta); }

        MapFeatures predict(const Vec2 &p_bs) const;
        MlpParams &mutable_params() { return params_; }
        Vec backward(const Vec2 &p_bs, const std::vector<FeatureGradient> &upstream) const;

    private:
        MapArchitecture arch_;
        EncodingFrame frame_;
        MlpParams params_;
    };

    // Free-function views
    MapFeatures predict_map(const Vec2 &p_bs, const NeuralMap &map);
    Vec map_backward(const Vec2 &p_bs, const NeuralMap &map, const std::vector<FeatureGradient> &upstream);

    struct AdamState
    {
        long step = 0;
        Vec m, v;
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;

        static AdamState create(Eigen::Index n, double lr = 1e-3);
    };

    // One descent step on the objective whose gradient is grad
    void adam_step(Vec &theta, const Vec &grad, AdamState &state);

} // namespace rfslam

#endif
