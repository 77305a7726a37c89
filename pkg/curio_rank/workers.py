from concurrent.futures import ThreadPoolExecutor


def parallel_map(func, items, threads=1):
    """Applies < func > to every element of < items > and returns the results in input order.
    With < threads > == 1 the work runs inline; otherwise a thread pool of that size is used.
    Output order never depends on the thread count.

    Parameters:
        func (callable): function of one argument
        items (iterable): inputs
        threads (int): worker count

    Returns:
        list: func(item) for each item, in order
    """

    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
