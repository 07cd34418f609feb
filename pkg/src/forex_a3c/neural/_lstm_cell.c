/* Fused elementwise LSTM cell math. Matrix products are done by the caller.
 * Gate blocks in each 4H row: input, forget, candidate, output. */
#include <math.h>
#include "_lstm_cell.h"

static inline double sig(double a) { return 1.0 / (1.0 + exp(-a)); }

/* gates holds pre-activations on entry (without bias) and activations on exit. */
void lstm_cell_forward(int B, int H, double *restrict gates, const double *restrict bias,
                       const double *restrict c_prev, double *restrict c_next,
                       double *restrict h_next)
{
    for (int r = 0; r < B; r++) {
        double *restrict g = gates + (long)r * 4 * H;
        const double *restrict cp = c_prev + (long)r * H;
        double *restrict cn = c_next + (long)r * H;
        double *restrict hn = h_next + (long)r * H;
        #pragma omp simd
        for (int j = 0; j < H; j++) {
            double gi = sig(g[j] + bias[j]);
            double gf = sig(g[H + j] + bias[H + j]);
            double gg = tanh(g[2 * H + j] + bias[2 * H + j]);
            double go = sig(g[3 * H + j] + bias[3 * H + j]);
            double c = gf * cp[j] + gi * gg;
            g[j] = gi;
            g[H + j] = gf;
            g[2 * H + j] = gg;
            g[3 * H + j] = go;
            cn[j] = c;
            hn[j] = go * tanh(c);
        }
    }
}

/* dc carries dL/dc_t in and dL/dc_{t-1} out; da receives pre-activation gradients. */
void lstm_cell_backward(int B, int H, const double *restrict gates,
                        const double *restrict c_prev, const double *restrict c_next,
                        const double *restrict dh, double *restrict dc, double *restrict da)
{
    for (int r = 0; r < B; r++) {
        const double *restrict g = gates + (long)r * 4 * H;
        const double *restrict cp = c_prev + (long)r * H;
        const double *restrict cn = c_next + (long)r * H;
        const double *restrict dhr = dh + (long)r * H;
        double *restrict dcr = dc + (long)r * H;
        double *restrict d = da + (long)r * 4 * H;
        #pragma omp simd
        for (int j = 0; j < H; j++) {
            double gi = g[j], gf = g[H + j], gg = g[2 * H + j], go = g[3 * H + j];
            double tc = tanh(cn[j]);
            double dcc = dcr[j] + dhr[j] * go * (1.0 - tc * tc);
            d[j] = dcc * gg * gi * (1.0 - gi);
            d[H + j] = dcc * cp[j] * gf * (1.0 - gf);
            d[2 * H + j] = dcc * gi * (1.0 - gg * gg);
            d[3 * H + j] = dhr[j] * tc * go * (1.0 - go);
            dcr[j] = dcc * gf;
        }
    }
}
