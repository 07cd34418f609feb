#ifndef FOREX_A3C_LSTM_CELL_H
#define FOREX_A3C_LSTM_CELL_H

void lstm_cell_forward(int B, int H, double *gates, const double *bias,
                       const double *c_prev, double *c_next, double *h_next);

void lstm_cell_backward(int B, int H, const double *gates, const double *c_prev,
                        const double *c_next, const double *dh, double *dc, double *da);

#endif
