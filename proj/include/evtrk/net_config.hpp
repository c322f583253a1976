#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace evtrk {

struct ConvGeom {
    int kernel = 3;
    int stride = 1;
    int pad = 0;
    int out_ch = 0;
};

// Geometry of the whole tracker at one preset. Encoder blocks correspond to
// table rows: a block is one or two convolutions whose joint output defines
// the row's spatial size and channel count.
struct NetConfig {
    std::string preset = "paper";
    int patch_size = 31;
    int template_in_ch = 1;
    int event_in_ch = 10;

    std::vector<std::vector<ConvGeom>> enc_down;  // last block output = bottleneck
    std::vector<int> up_sizes;          // FPN stage output sizes, ascending
    std::vector<int> lateral_blocks;    // enc_down block feeding each FPN stage
    int feat_ch = 384;                  // FPN feature channels
    int final_convs = 2;                // trailing 3x3 same convs on the feature map

    int post_corr_ch = 128;             // two 3x3 same convs after the concat
    std::vector<std::vector<ConvGeom>> joint_down;
    int lstm_ch = 128;
    int lstm_kernel = 3;
    std::vector<std::vector<ConvGeom>> joint_tail;

    int out_dim = 256;                  // joint-encoder feature vector = attention width
    int attn_heads = 8;
    double layerscale_init = 0.1;
    double head_init_scale = 0.01;
    bool use_attention = true;

    int patch_radius() const { return (patch_size - 1) / 2; }

    NetConfig with_event_channels(int ch) const {
        NetConfig c = *this;
        c.event_in_ch = ch;
        return c;
    }
    NetConfig without_attention() const {
        NetConfig c = *this;
        c.use_attention = false;
        return c;
    }

    static NetConfig paper() {
        NetConfig c;
        c.preset = "paper";
        c.patch_size = 31;
        c.enc_down = {
            {{1, 1, 0, 32}, {1, 1, 0, 32}},      // 31x31
            {{5, 1, 0, 64}, {5, 1, 0, 64}},      // 23x23
            {{5, 1, 0, 128}, {5, 1, 0, 128}},    // 15x15
            {{3, 2, 0, 256}, {3, 1, 0, 256}},    // 5x5
            {{5, 1, 0, 384}, {1, 1, 0, 384}},    // 1x1
            {{1, 1, 0, 384}, {1, 1, 0, 384}},    // 1x1 -> bottleneck
        };
        c.up_sizes = {5, 15, 23, 31};
        c.lateral_blocks = {3, 2, 1, 0};
        c.feat_ch = 384;
        c.final_convs = 2;
        c.post_corr_ch = 128;
        c.joint_down = {
            {{3, 2, 0, 64}, {3, 1, 1, 64}},      // 31 -> 15
            {{3, 2, 0, 128}, {3, 1, 1, 128}},    // 15 -> 7
        };
        c.lstm_ch = 128;
        c.joint_tail = {
            {{3, 2, 0, 256}, {3, 1, 1, 256}},    // 7 -> 3
            {{3, 1, 0, 256}},                    // 3 -> 1
        };
        c.out_dim = 256;
        c.attn_heads = 8;
        return c;
    }

    // Desk-scale preset: channel widths of the full model divided by 8 and a
    // 15x15 patch with one fewer pyramid stage.
    static NetConfig toy() {
        NetConfig c;
        c.preset = "toy";
        c.patch_size = 15;
        c.enc_down = {
            {{1, 1, 0, 4}, {1, 1, 0, 4}},        // 15x15
            {{5, 1, 0, 8}, {5, 1, 0, 8}},        // 7x7
            {{3, 1, 0, 16}, {3, 1, 0, 16}},      // 3x3
            {{3, 1, 0, 32}, {1, 1, 0, 48}},      // 1x1
            {{1, 1, 0, 48}, {1, 1, 0, 48}},      // 1x1 -> bottleneck
        };
        c.up_sizes = {3, 7, 15};
        c.lateral_blocks = {2, 1, 0};
        c.feat_ch = 48;
        c.final_convs = 1;
        c.post_corr_ch = 16;
        c.joint_down = {
            {{3, 2, 0, 8}, {3, 1, 1, 8}},        // 15 -> 7
            {{3, 2, 0, 16}, {3, 1, 1, 16}},      // 7 -> 3
        };
        c.lstm_ch = 16;
        c.joint_tail = {
            {{3, 1, 0, 32}},                     // 3 -> 1
        };
        c.out_dim = 32;
        c.attn_heads = 4;
        return c;
    }

    // Minimal widths for finite-difference checks through the full model.
    static NetConfig micro() {
        NetConfig c = toy();
        c.preset = "micro";
        c.enc_down = {
            {{1, 1, 0, 2}, {1, 1, 0, 2}},
            {{5, 1, 0, 3}, {5, 1, 0, 3}},
            {{3, 1, 0, 4}, {3, 1, 0, 4}},
            {{3, 1, 0, 5}, {1, 1, 0, 6}},
            {{1, 1, 0, 6}, {1, 1, 0, 6}},
        };
        c.feat_ch = 6;
        c.final_convs = 1;
        c.post_corr_ch = 4;
        c.joint_down = {
            {{3, 2, 0, 3}, {3, 1, 1, 3}},
            {{3, 2, 0, 4}, {3, 1, 1, 4}},
        };
        c.lstm_ch = 4;
        c.joint_tail = {{{3, 1, 0, 8}}};
        c.out_dim = 8;
        c.attn_heads = 2;
        c.event_in_ch = 3;
        return c;
    }

    static NetConfig by_name(const std::string& name) {
        if (name == "paper") return paper();
        if (name == "toy") return toy();
        if (name == "micro") return micro();
        throw std::invalid_argument("unknown preset: " + name);
    }
};

struct LayerShape {
    std::string layer;
    int channels = 0;
    int spatial = 0;
};

}  // namespace evtrk
